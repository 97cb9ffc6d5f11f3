"""Nuclear norm and other Schatten norms from ridge solves, checked against the SVD."""

import numpy as np

from sketchsolve.harness import FAMILIES, family_matrix
from sketchsolve.spectrum import SchattenQuery, nuclear_norm, schatten_estimate


def main() -> None:
    d, eps = 100, 0.1
    print(f"nuclear norm, d = {d}, eps = {eps}")
    for fam in FAMILIES:
        A = family_matrix(fam, d, seed=0)
        exact = np.linalg.svd(A, compute_uv=False).sum()
        est = nuclear_norm(A, eps, seed=0)
        print(f"  {fam:10s} estimate/exact = {est / exact:.4f}")
    A = family_matrix("powerlaw1", d, seed=1)
    s = np.linalg.svd(A, compute_uv=False)
    for p in (0.5, 1.5):
        est = schatten_estimate(A, SchattenQuery(p, eps), seed=1)
        print(f"Schatten p={p}: estimate/exact = {est / np.sum(s**p):.4f}")
    M = A.T @ A
    est = schatten_estimate(M, SchattenQuery(0.5, eps, "pd"), seed=1)
    print(f"pd backend, sum of sqrt eigenvalues: estimate/exact = {est / s.sum():.4f}")


if __name__ == "__main__":
    main()
