"""Synthetic instances, file formats, oracles and benchmark suites behind the CLI."""

from __future__ import annotations

import math
import shlex
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.io as sio

from .chains import SpectrumHints
from .core import (
    THEORY,
    PRACTICAL,
    ContractViolation,
    Settings,
    approx_factor,
    counting,
    dense_solver,
    gram_matrix,
    m_norm_error,
    psd_sqrt,
    rng_for,
    symmetrize,
)

SUITES = ("scaling-regression", "scaling-pd", "tester-soundness", "nuclear-accuracy")
FAMILIES = ("flat", "step", "powerlaw1", "powerlaw2", "gaussian")


# --------------------------------------------------------------------------
# instances


@dataclass(frozen=True)
class InstanceSpec:
    """A synthetic matrix ``U·diag(σ)·Vᵀ`` (or ``Q·diag(λ)·Qᵀ`` when ``pd``).

    ``spectrum`` is ``"flat"``, ``"step:K:RATIO"``, ``"powerlaw:EXP"`` or an
    explicit sequence of positive values.
    """

    n: int
    d: int
    spectrum: str | tuple[float, ...] = "flat"
    seed: int = 0
    pd: bool = False

    def __post_init__(self) -> None:
        if not self.d >= 1:
            raise ContractViolation("d must be at least 1")
        if not self.pd and self.n < self.d:
            raise ContractViolation("need n >= d")

    def values(self) -> np.ndarray:
        """The prescribed singular values (eigenvalues for ``pd``), descending."""
        s = self.spectrum
        d = self.d
        if not isinstance(s, str):
            v = np.asarray(s, dtype=float)
            if v.shape != (d,):
                raise ContractViolation(f"explicit spectrum needs {d} values")
        else:
            name, *args = s.split(":")
            i = np.arange(1, d + 1, dtype=float)
            try:
                if name == "flat" and not args:
                    v = np.ones(d)
                elif name == "step" and len(args) == 2:
                    k, ratio = int(args[0]), float(args[1])
                    v = np.where(i <= k, ratio, 1.0)
                elif name == "powerlaw" and len(args) == 1:
                    v = i ** -float(args[0])
                else:
                    raise ValueError
            except ValueError:
                raise ContractViolation(f"cannot parse spectrum {s!r}") from None
        if not np.all(np.isfinite(v)) or np.any(v <= 0):
            raise ContractViolation("spectrum values must be positive")
        return v

    def descriptor(self) -> str:
        s = self.spectrum if isinstance(self.spectrum, str) else "explicit"
        return f"{'pd' if self.pd else 'ls'}:{self.n}x{self.d}:{s}:seed{self.seed}"


def random_orthonormal(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """``n × d`` matrix with orthonormal columns (QR of a Gaussian, sign-fixed)."""
    Q, R = np.linalg.qr(rng.standard_normal((n, d)))
    return Q * np.sign(np.diag(R))


def generate(spec: InstanceSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(matrix, values)`` with ``values`` in descending order."""
    v = np.sort(spec.values())[::-1]
    rng = rng_for(spec.seed, "instance")
    if spec.pd:
        Q = random_orthonormal(spec.d, spec.d, rng)
        return symmetrize((Q * v) @ Q.T), v
    U = random_orthonormal(spec.n, spec.d, rng)
    V = random_orthonormal(spec.d, spec.d, rng)
    return (U * v) @ V.T, v


def family_matrix(family: str, d: int, seed: int, n: int | None = None) -> np.ndarray:
    """Test families for norm estimation: prescribed spectra or a plain Gaussian."""
    n = n or 2 * d
    if family == "gaussian":
        return rng_for(seed, "gaussian-family").standard_normal((n, d))
    spectrum = {"flat": "flat", "step": "step:8:100", "powerlaw1": "powerlaw:1", "powerlaw2": "powerlaw:2"}
    if family not in spectrum:
        raise ContractViolation(f"unknown family {family!r}")
    return generate(InstanceSpec(n, d, spectrum[family], seed))[0]


# --------------------------------------------------------------------------
# files


def _require_file(path: str | Path) -> None:
    if not Path(path).is_file():
        raise FileNotFoundError(f"no such file: {path}")


def write_matrix(path: str | Path, M: np.ndarray) -> None:
    sio.mmwrite(str(path), np.asarray(M, dtype=float), precision=17)


def read_matrix(path: str | Path) -> np.ndarray:
    """Dense matrix from a Matrix Market file (array or coordinate)."""
    _require_file(path)
    try:
        M = sio.mmread(str(path))
    except ValueError as e:
        raise ContractViolation(f"{path}: {e}") from None
    M = M.toarray() if hasattr(M, "toarray") else np.asarray(M)
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or not np.all(np.isfinite(M)):
        raise ContractViolation(f"{path}: expected a finite 2-D matrix")
    return M


def read_vector(path: str | Path) -> np.ndarray:
    """Vector from Matrix Market (one column) or plain text, one value per line."""
    p = Path(path)
    if p.suffix == ".mtx":
        v = read_matrix(p)
        if 1 not in v.shape:
            raise ContractViolation(f"{path}: expected a single column")
        return v.ravel()
    return read_sidecar(p)


def write_sidecar(path: str | Path, values: Sequence[float]) -> None:
    Path(path).write_text("".join(f"{float(v)!r}\n" for v in values))


def read_sidecar(path: str | Path) -> np.ndarray:
    _require_file(path)
    text = Path(path).read_text().split()
    try:
        v = np.array([float(t) for t in text])
    except ValueError:
        raise ContractViolation(f"{path}: non-numeric entry") from None
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise ContractViolation(f"{path}: expected finite values")
    return v


def write_instance(prefix: str | Path, spec: InstanceSpec) -> dict[str, Path]:
    """Write ``PREFIX.mtx``, ``PREFIX.sigma`` and a Gaussian ``PREFIX.rhs.mtx``."""
    M, v = generate(spec)
    prefix = Path(prefix)
    paths = {"matrix": prefix.with_suffix(".mtx"), "sigma": prefix.with_suffix(".sigma"),
             "rhs": prefix.with_suffix(".rhs.mtx")}
    write_matrix(paths["matrix"], M)
    write_sidecar(paths["sigma"], v)
    b = rng_for(spec.seed, "rhs").standard_normal((M.shape[0], 1))
    write_matrix(paths["rhs"], b)
    return paths


# --------------------------------------------------------------------------
# records


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return shlex.quote(str(v))


def _parse(s: str):
    if s in ("true", "false"):
        return s == "true"
    for cast in (int, float):
        try:
            return cast(s)
        except ValueError:
            pass
    return s


@dataclass
class BenchRecord:
    """One benchmark or command result, serialized as ``key=value`` pairs on a line."""

    command: str
    instance: str
    eps: float
    seed: int
    wall_time: float = 0.0
    work: int = 0
    error: float | None = None
    extra: dict = field(default_factory=dict)

    def to_line(self) -> str:
        items = {"command": self.command, "instance": self.instance, "eps": float(self.eps),
                 "seed": int(self.seed), "wall_time": float(self.wall_time), "work": int(self.work)}
        if self.error is not None:
            items["error"] = float(self.error)
        items.update(self.extra)
        return " ".join(f"{k}={_fmt(v)}" for k, v in items.items())

    @classmethod
    def from_line(cls, line: str) -> "BenchRecord":
        kv = {}
        for tok in shlex.split(line):
            k, sep, v = tok.partition("=")
            if not sep:
                raise ContractViolation(f"malformed record token {tok!r}")
            kv[k] = v
        try:
            # string fields keep their raw text so values like "00" survive
            rec = cls(kv.pop("command"), kv.pop("instance"), float(kv.pop("eps")), int(kv.pop("seed")),
                      float(kv.pop("wall_time")), int(kv.pop("work")))
            if "error" in kv:
                rec.error = float(kv.pop("error"))
        except KeyError as e:
            raise ContractViolation(f"record lacks field {e}") from None
        except ValueError as e:
            raise ContractViolation(f"malformed record value: {e}") from None
        rec.extra = {k: _parse(v) for k, v in kv.items()}
        return rec


# --------------------------------------------------------------------------
# oracles


def regression_error(A: np.ndarray, b: np.ndarray, x: np.ndarray) -> float:
    """``‖Ax̂ - Ax*‖/‖Ax*‖`` with ``x*`` from a dense least-squares solve."""
    x_star = np.linalg.lstsq(A, b, rcond=None)[0]
    ref = A @ x_star
    return float(np.linalg.norm(A @ x - ref) / np.linalg.norm(ref))


def pd_error(M: np.ndarray, b: np.ndarray, x: np.ndarray) -> float:
    """``‖x̂ - x*‖_M/‖x*‖_M`` by dense Cholesky."""
    return math.sqrt(m_norm_error(M, x, b))


def fit_exponent(dims: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of ``log(values)`` against ``log(dims)``."""
    return float(np.polyfit(np.log(np.asarray(dims, float)), np.log(np.asarray(values, float)), 1)[0])


# --------------------------------------------------------------------------
# suites


def _timed(fn: Callable[[], np.ndarray]) -> tuple[np.ndarray, int, float]:
    t0 = time.perf_counter()
    with counting() as wc:
        x = fn()
    return x, wc.work, time.perf_counter() - t0


def scaling_regression(dims: Sequence[int] = (256, 512, 1024), k: int = 8, eps: float = 1e-6, seed: int = 0,
                       settings: Settings = PRACTICAL) -> tuple[list[BenchRecord], float]:
    """Primal-dual regression on ``(k, 1)``-well-conditioned step instances, ``n = 2d``."""
    from .primal_dual import regression_solve

    recs = []
    for d in dims:
        spec = InstanceSpec(2 * d, d, f"step:{k}:100", seed)
        A, s = generate(spec)
        b = rng_for(seed, "rhs", d).standard_normal(2 * d)
        hints = SpectrumHints.from_singular_values(s, k)
        x, work, wall = _timed(lambda: regression_solve(A, b, k, eps, seed, hints, settings))
        recs.append(BenchRecord("bench:scaling-regression", spec.descriptor(), eps, seed, wall, work,
                                regression_error(A, b, x), {"d": d, "k": k}))
    return recs, fit_exponent(dims, [r.work for r in recs])


def scaling_pd(dims: Sequence[int] = (256, 512, 1024), k: int = 8, eps: float = 1e-6, seed: int = 0,
               settings: Settings = PRACTICAL) -> tuple[list[BenchRecord], float]:
    """PD solve on ``(k, 1/2)``-well-conditioned step instances."""
    from .pd_solver import pd_solve

    recs = []
    for d in dims:
        spec = InstanceSpec(d, d, f"step:{k}:100", seed, pd=True)
        M, lam = generate(spec)
        b = rng_for(seed, "rhs", d).standard_normal(d)
        hints = SpectrumHints.from_eigenvalues(lam, k)
        x, work, wall = _timed(lambda: pd_solve(M, b, k, eps, seed, hints, settings))
        recs.append(BenchRecord("bench:scaling-pd", spec.descriptor(), eps, seed, wall, work,
                                pd_error(M, b, x), {"d": d, "k": k}))
    return recs, fit_exponent(dims, [r.work for r in recs])


@dataclass
class SoundnessTally:
    """Verdict counts for one tester against the dense oracle."""

    trials: int = 0
    confirmed2: int = 0  # oracle: ≈₂ holds
    refuted4: int = 0  # oracle: ≈₄ fails
    false_reject: int = 0  # X = 0 although ≈₂ holds
    false_accept: int = 0  # X = 1 although ≈₄ fails

    def add(self, factor: float, X: int) -> None:
        self.trials += 1
        if factor <= 2.0:
            self.confirmed2 += 1
            self.false_reject += int(X == 0)
        elif factor > 4.0:
            self.refuted4 += 1
            self.false_accept += int(X == 1)

    @property
    def violations(self) -> int:
        return self.false_reject + self.false_accept


def _spread(rng: np.random.Generator, size: int) -> np.ndarray:
    """Row weights whose squares span a random range ``[1/s, s]`` with ``s ∈ [1, 16]``."""
    s = math.exp(rng.uniform(0.0, math.log(16.0)))
    return np.sqrt(np.exp(rng.uniform(-math.log(s), math.log(s), size)))


def primal_dual_tester_trial(d: int, seed: int, settings: Settings = THEORY) -> tuple[float, int]:
    """One random ``(A, B = RA, ν)`` trial: oracle factor and tester verdict."""
    from .primal_dual import spectral_tester

    rng = rng_for(seed, "pd-tester-trial")
    n = 2 * d
    A = rng.standard_normal((n, d)) * np.exp(rng.uniform(-2, 2, d))
    B = A * _spread(rng, n)[:, None]
    nu = float(np.linalg.norm(A, 2) ** 2 * 10.0 ** rng.uniform(-4, -1))
    M = gram_matrix(A, nu)
    N = gram_matrix(B, nu)
    verdict = spectral_tester(A, B, nu, dense_solver(M), seed, dense_solver(N), settings)
    return approx_factor(M, N), verdict.X


def dual_tester_trial(d: int, seed: int, settings: Settings = THEORY) -> tuple[float, int]:
    """One random implicit trial with ``M = AAᵀ`` and ``B = SA``."""
    from .pd_solver import dual_tester

    rng = rng_for(seed, "dual-tester-trial")
    s = int(rng.choice([4, 16])) * d
    lam = np.exp(rng.uniform(-4, 2, d))
    Q = random_orthonormal(d, d, rng)
    Mp = symmetrize((Q * lam) @ Q.T)
    S = rng.standard_normal((s, d)) / math.sqrt(s) * _spread(rng, s)[:, None]
    Mn = symmetrize(S @ Mp @ S.T)
    C = Mp @ S.T
    nu = float(lam.max() * 10.0 ** rng.uniform(-4, -1))
    Asq = psd_sqrt(Mp)
    primal_a = Mp + nu * np.eye(d)
    primal_b = symmetrize(Asq @ S.T @ S @ Asq) + nu * np.eye(d)
    f = dense_solver(Mp + nu * np.eye(d))
    g = dense_solver(Mn + nu * np.eye(s))
    verdict = dual_tester(Mp, C, Mn, nu, f, g, seed, settings)
    return approx_factor(primal_a, primal_b), verdict.X


def tester_soundness(trials: int = 200, d: int = 16, seed: int = 0,
                     settings: Settings = THEORY) -> dict[str, SoundnessTally]:
    out = {"primal-dual": SoundnessTally(), "dual": SoundnessTally()}
    for i in range(trials):
        out["primal-dual"].add(*primal_dual_tester_trial(d, seed * 100003 + i, settings))
        out["dual"].add(*dual_tester_trial(d, seed * 100003 + i, settings))
    return out


def nuclear_accuracy(trials: int = 100, d: int = 100, eps: float = 0.1, seed: int = 0,
                     families: Sequence[str] = FAMILIES) -> dict[str, list[float]]:
    """Ratios estimate/oracle of the nuclear norm per family over seeded trials."""
    from .spectrum import nuclear_norm

    out: dict[str, list[float]] = {}
    for fam in families:
        ratios = []
        for i in range(trials):
            A = family_matrix(fam, d, seed * 100003 + i)
            est = nuclear_norm(A, eps, seed=seed * 100003 + i)
            ratios.append(est / float(np.linalg.svd(A, compute_uv=False).sum()))
        out[fam] = ratios
    return out
