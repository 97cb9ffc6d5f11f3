"""Least squares on a matrix with a few large singular values.

Compares the warm-up chain and the primal-dual chain against a dense solve,
reporting error and counted work.
"""

import numpy as np

from sketchsolve.chains import SpectrumHints, regression_solve_warmup
from sketchsolve.core import counting
from sketchsolve.harness import InstanceSpec, generate, regression_error
from sketchsolve.primal_dual import regression_solve


def main() -> None:
    d, k, eps = 128, 4, 1e-6
    A, sigma = generate(InstanceSpec(2 * d, d, f"step:{k}:100", seed=1))
    b = np.random.default_rng(0).standard_normal(2 * d)
    hints = SpectrumHints.from_singular_values(sigma, k)
    runs = {
        "warm-up chain": lambda: regression_solve_warmup(A, b, k, eps, "optimized", hints, seed=2),
        "primal-dual chain": lambda: regression_solve(A, b, k, eps, seed=2, spectrum_hints=hints),
    }
    print(f"A: {A.shape[0]}x{d}, {k} singular values at 100, the rest at 1; eps = {eps:g}")
    for name, run in runs.items():
        with counting() as wc:
            x = run()
        print(f"{name:18s} error {regression_error(A, b, x):.2e}  work {wc.work:.3g} multiply-adds")
    print(f"{'dense d^2 n':18s} work {2 * d * d * A.shape[0]:.3g} multiply-adds (normal equations)")


if __name__ == "__main__":
    main()
