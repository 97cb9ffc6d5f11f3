"""Command-line front end: ``gen``, ``solve``, ``spectrum`` and ``bench``.

Exit codes: 0 on success, 1 on usage or I/O errors, 2 when ``--verify``
finds the result outside its contract.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import harness as H
from .chains import SpectrumHints, regression_solve_warmup
from .core import THEORY, PRACTICAL, ContractViolation, counting
from .pd_solver import pd_solve
from .primal_dual import regression_solve
from .spectrum import SchattenQuery, schatten_estimate

EXIT_OK, EXIT_USAGE, EXIT_CONTRACT = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # exit 1 instead of argparse's 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _settings(name: str, alpha: float | None):
    base = THEORY if name == "theory" else PRACTICAL
    return base.with_(alpha=alpha) if alpha is not None else base


def _emit(rec: H.BenchRecord, path: str | None) -> None:
    line = rec.to_line()
    print(line)
    if path:
        with open(path, "a") as fh:
            fh.write(line + "\n")


def _write_trace(path: str | None, trace: list) -> None:
    if path:
        with open(path, "w") as fh:
            for ev in trace:
                fh.write(json.dumps(ev, sort_keys=True, default=float) + "\n")


# --------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    if args.values:
        spectrum: str | tuple[float, ...] = tuple(H.read_sidecar(args.values))
    else:
        spectrum = args.spectrum
    spec = H.InstanceSpec(args.n if args.n is not None else args.d, args.d, spectrum, args.seed, args.pd)
    paths = H.write_instance(args.out, spec)
    for k, p in paths.items():
        print(f"{k}={p}")
    return EXIT_OK


# --------------------------------------------------------------------------
# solve


def _hints(args, kind: str) -> SpectrumHints | None:
    if args.sigma:
        v = H.read_sidecar(args.sigma)
        return SpectrumHints.from_eigenvalues(v, args.k) if kind == "pd" else SpectrumHints.from_singular_values(v, args.k)
    if args.grid == "none":
        lam, Lam = args.lambda_tilde, args.Lambda_tilde
        if lam is None or Lam is None:
            raise UsageError("--grid none needs --lambda-tilde and --Lambda-tilde (or --sigma)")
        u = args.u_tilde if args.u_tilde is not None else Lam
        return SpectrumHints(u=u, lambda_min=lam, Lambda=Lam, kappa=args.kappa_tilde)
    return None


def cmd_solve(args) -> int:
    A = H.read_matrix(args.matrix)
    b = H.read_vector(args.rhs)
    settings = _settings(args.settings, args.alpha)
    hints = _hints(args, args.mode)
    trace: list = []
    t0 = time.perf_counter()
    with counting() as wc:
        if args.mode == "warmup":
            schedule = "optimized" if hints is not None else "geometric"
            x = regression_solve_warmup(A, b, args.k, args.eps, schedule, hints, args.seed, settings,
                                        deadline=args.deadline, trace=trace)
        elif args.mode == "primal-dual":
            x = regression_solve(A, b, args.k, args.eps, args.seed, hints, settings,
                                 deadline=args.deadline, trace=trace)
        else:
            x = pd_solve(A, b, args.k, args.eps, args.seed, hints, settings, deadline=args.deadline, trace=trace)
    wall = time.perf_counter() - t0
    H.write_matrix(args.out, x[:, None])
    _write_trace(args.trace, trace)
    error = None
    if args.verify == "dense":
        error = H.pd_error(A, b, x) if args.mode == "pd" else H.regression_error(A, b, x)
    rec = H.BenchRecord(f"solve:{args.mode}", Path(args.matrix).name, args.eps, args.seed, wall, wc.work, error,
                        {"k": args.k})
    _emit(rec, args.record)
    if error is not None and not error <= args.eps:
        print(f"contract violated: error {error:.3e} > eps {args.eps:.3e}", file=sys.stderr)
        return EXIT_CONTRACT
    return EXIT_OK


# --------------------------------------------------------------------------
# spectrum


def cmd_spectrum(args) -> int:
    try:
        query = SchattenQuery(args.p, args.eps, args.backend, trace_probes=args.probes, n_nodes=args.nodes)
    except ContractViolation as e:
        raise UsageError(str(e)) from None
    A = H.read_matrix(args.matrix)
    t0 = time.perf_counter()
    with counting() as wc:
        est = schatten_estimate(A, query, args.seed)
    wall = time.perf_counter() - t0
    print(repr(est))
    error = None
    if args.verify == "svd":
        vals = np.linalg.eigvalsh(A) if args.backend == "pd" else np.linalg.svd(A, compute_uv=False)
        exact = float(np.sum(np.clip(vals, 0, None) ** args.p))
        error = abs(est - exact) / exact
        print(f"relative_error={error!r}")
    rec = H.BenchRecord(f"spectrum:p={args.p}", Path(args.matrix).name, args.eps, args.seed, wall, wc.work, error,
                        {"estimate": est, "backend": args.backend})
    _emit(rec, args.record)
    if error is not None and not error <= args.eps:
        return EXIT_CONTRACT
    return EXIT_OK


# --------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    if not args.suite:
        raise UsageError("select at least one suite")
    out = args.out
    if out:
        Path(out).write_text("")
    for suite in args.suite:
        if suite in ("scaling-regression", "scaling-pd"):
            fn = H.scaling_regression if suite == "scaling-regression" else H.scaling_pd
            recs, expo = fn(tuple(args.dims), args.k, args.eps if args.eps is not None else 1e-6, args.seed)
            for r in recs:
                _emit(r, out)
            _emit(H.BenchRecord(f"bench:{suite}", "fit", recs[0].eps, args.seed,
                                sum(r.wall_time for r in recs), sum(r.work for r in recs), None,
                                {"exponent": expo}), out)
        elif suite == "tester-soundness":
            t0 = time.perf_counter()
            tallies = H.tester_soundness(args.trials or 200, args.tester_d, args.seed)
            for name, t in tallies.items():
                _emit(H.BenchRecord("bench:tester-soundness", name, 0.0, args.seed, time.perf_counter() - t0, 0, None,
                                    {"trials": t.trials, "confirmed2": t.confirmed2, "refuted4": t.refuted4,
                                     "false_reject": t.false_reject, "false_accept": t.false_accept,
                                     "violations": t.violations}), out)
        else:
            eps = args.eps if args.eps is not None else 0.1
            t0 = time.perf_counter()
            res = H.nuclear_accuracy(args.trials or 100, args.nuclear_d, eps, args.seed)
            for fam, ratios in res.items():
                r = np.asarray(ratios)
                _emit(H.BenchRecord("bench:nuclear-accuracy", fam, eps, args.seed, time.perf_counter() - t0, 0, None,
                                    {"trials": r.size, "within_1.5eps": int(np.sum(np.abs(r - 1) <= 1.5 * eps)),
                                     "worst": float(np.max(np.abs(r - 1)))}), out)
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sketchsolve", description="Sketching-based regression, PD solves and spectral sums.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="write a synthetic instance (Matrix Market plus spectrum sidecar)")
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--n", type=int, help="rows (default d)")
    g.add_argument("--spectrum", default="flat", help="flat | step:K:RATIO | powerlaw:EXP")
    g.add_argument("--values", help="explicit spectrum file, one value per line")
    g.add_argument("--pd", action="store_true", help="write a symmetric PD matrix Q·diag(λ)·Qᵀ")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output prefix")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("solve", help="solve a regression or PD system")
    s.add_argument("--mode", choices=("warmup", "primal-dual", "pd"), required=True)
    s.add_argument("--matrix", required=True)
    s.add_argument("--rhs", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--eps", type=float, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=float)
    s.add_argument("--grid", choices=("auto", "none"), default="auto")
    s.add_argument("--kappa-tilde", type=float)
    s.add_argument("--lambda-tilde", type=float, help="smallest squared singular value (eigenvalue for pd)")
    s.add_argument("--Lambda-tilde", dest="Lambda_tilde", type=float, help="tail mass beyond 2k")
    s.add_argument("--u-tilde", type=float, help="tail mass beyond k (warm-up chain)")
    s.add_argument("--sigma", help="spectrum sidecar; exact hints in place of the grid")
    s.add_argument("--settings", choices=("practical", "theory"), default="practical")
    s.add_argument("--deadline", type=float, help="grid search time budget in seconds")
    s.add_argument("--out", required=True)
    s.add_argument("--trace")
    s.add_argument("--record", help="append the BenchRecord to this file")
    s.add_argument("--verify", choices=("dense",))
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("spectrum", help="estimate a Schatten p-norm power")
    e.add_argument("--p", type=float, required=True)
    e.add_argument("--matrix", required=True)
    e.add_argument("--eps", type=float, required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--backend", choices=("regression", "pd"), default="regression")
    e.add_argument("--probes", type=int)
    e.add_argument("--nodes", type=int)
    e.add_argument("--record")
    e.add_argument("--verify", choices=("svd",))
    e.set_defaults(func=cmd_spectrum)

    b = sub.add_parser("bench", help="run seeded benchmark suites")
    b.add_argument("--suite", action="append", choices=H.SUITES, default=[])
    b.add_argument("--dims", type=int, nargs="+", default=[256, 512, 1024])
    b.add_argument("--k", type=int, default=8)
    b.add_argument("--eps", type=float)
    b.add_argument("--trials", type=int)
    b.add_argument("--tester-d", type=int, default=16)
    b.add_argument("--nuclear-d", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ContractViolation) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (np.linalg.LinAlgError, ArithmeticError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_CONTRACT if getattr(args, "verify", None) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
