import time
from dataclasses import dataclass

import numpy as np
import pytest

from varlse.problem import example_problem, load_problem

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def reference():
    return example_problem()


@dataclass(frozen=True)
class SeedSweep:
    traces: list
    seconds: float


@pytest.fixture(scope="session")
def reference_sweep():
    """20 seeds of the reference run: depth 1, analytic direct global cost, lr 0.01, 50 steps."""
    from varlse.cost import CostSpec
    from varlse.trainer import TrainConfig, solve

    problem = example_problem()
    start = time.perf_counter()
    traces = [
        solve(problem, TrainConfig(steps=50, learning_rate=0.01, cost_spec=CostSpec("global", "direct"),
                                   seed=seed, depth=1, final_shots=1000))
        for seed in range(20)
    ]
    return SeedSweep(traces, time.perf_counter() - start)


def random_unitary(rng, dim):
    z = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_state_vector(rng, dim):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def random_problem(rng, n=None, m=None, complex_coeffs=True, mode="unitary"):
    """Random unitary-mode (or Pauli-mode) problem on 2-3 qubits."""
    n = n or int(rng.integers(2, 4))
    m = m or int(rng.integers(1, 5))
    coeffs = rng.normal(size=m)
    if complex_coeffs:
        coeffs = coeffs + 1j * rng.normal(size=m)
    b = random_state_vector(rng, 2**n)
    if mode == "pauli":
        labels = ["".join(rng.choice(list("IXYZ"), size=n)) for _ in range(m)]
        return load_problem("pauli", b, labels, coeffs)
    mats = [random_unitary(rng, 2**n) for _ in range(m)]
    return load_problem("unitary", b, mats, coeffs)


def state_prep(vec):
    """State-preparation callable that maps |0...0> to ``vec``."""
    from varlse.problem import completion_unitary
    from varlse.qsim import apply_matrix

    u = completion_unitary(np.asarray(vec, dtype=complex))
    return lambda s: apply_matrix(s, u)
