"""Shared fixtures: every test runs under the PAGD iteration-cap check."""

from __future__ import annotations

import numpy as np
import pytest

from sketchsolve.harness import InstanceSpec, generate
from sketchsolve.iterative import pagd_totals


# criterion number -> (title, detail), filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, str]] = {}


def report(criterion: int, title: str, detail: str) -> None:
    ACCEPTANCE[criterion] = (title, detail)
    print(f"criterion {criterion} ({title}): {detail}")


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    outcomes = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            name = rep.nodeid.rsplit("::", 1)[-1]
            if "test_acceptance" in rep.nodeid and name.startswith("test_criterion_"):
                n = int(name.split("_")[2])
                if rep.when == "call" or key != "passed":
                    outcomes[n] = "PASS" if key == "passed" and outcomes.get(n, "PASS") == "PASS" else "FAIL"
    if not outcomes:
        return
    totals = pagd_totals()
    terminalreporter.section("acceptance criteria")
    for n in sorted(outcomes):
        title, detail = ACCEPTANCE.get(n, (f"criterion {n}", "did not complete"))
        terminalreporter.write_line(f"{outcomes[n]} criterion {n}: {title}: {detail}")
    terminalreporter.write_line(f"session PAGD runs: {totals['calls']}, over cap: {totals['over_cap']}")


@pytest.fixture(autouse=True)
def pagd_cap_guard():
    """Fail any test during which a PAGD run exceeded ``⌈4√κ·log(2/ε)⌉`` applications."""
    before = pagd_totals()
    yield
    after = pagd_totals()
    assert after["over_cap"] == before["over_cap"], "a PAGD run exceeded its iteration cap"


def step_matrix(n: int, d: int, k: int, seed: int, ratio: float = 100.0):
    """``n × d`` matrix with ``k`` singular values equal to ``ratio`` and the rest 1."""
    return generate(InstanceSpec(n, d, f"step:{k}:{ratio}", seed))


def step_pd(d: int, k: int, seed: int, ratio: float = 100.0):
    return generate(InstanceSpec(d, d, f"step:{k}:{ratio}", seed, pd=True))


def random_psd(d: int, rng: np.random.Generator, lo: float = -3.0, hi: float = 1.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.exp(rng.uniform(lo, hi, d))
    M = (Q * lam) @ Q.T
    return (M + M.T) / 2, lam
