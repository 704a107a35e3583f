"""Cost functions and the circuit-level estimators behind them.

Notation: ``|v> = V|0>`` is the ansatz state, ``|psi> = A|v>`` with
``A = sum_k c_k A_k``, and ``U_b|0> = |b>``.  The costs are

    C_G = 1 - |<b|psi>|^2 / <psi|psi>
    C_L = 1 - S_L / <psi|psi>,   S_L = (1/n) sum_j <psi| U_b (|0><0|_j x I) U_b^dag |psi>

with the constant ``1`` exact and only the ratio estimated.  Term estimators:

    beta_kl     = <v| A_l^dag A_k |v>
    mu_k        = <b| A_k |v>
    gamma_kl    = mu_k conj(mu_l)
    delta_kl^j  = <v| A_l^dag U_b Z_j U_b^dag A_k |v>

Every simulated circuit is recorded on a :class:`CircuitCounter`, so the
number of executions can be checked against :func:`count_evaluations`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache, partial
from typing import Callable, Sequence

import numpy as np

from . import qsim
from .ansatz import AnsatzParams, apply_ansatz
from .problem import LSEProblem, assemble_matrix, completion_unitary
from .qsim import StateVector

KINDS = ("global", "local")
METHODS = ("direct", "hadamard", "overlap", "coherent")

Prep = Callable[[StateVector], StateVector]


class CostConfigError(ValueError):
    """Unsupported combination of cost kind, method and problem mode."""


class ZeroNormError(ArithmeticError):
    """<psi|psi> estimate is not positive, so the normalized cost is undefined."""


# <psi|psi> below this fraction of sum |c_k|^2 (or ||A||^2) is round-off, not signal
ZERO_NORM_RTOL = 1e-12


@dataclass(frozen=True)
class CostSpec:
    kind: str = "global"
    method: str = "direct"
    shots: int | None = None  # None means exact expectation values

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CostConfigError(f"unknown cost kind {self.kind!r}")
        if self.method not in METHODS:
            raise CostConfigError(f"unknown method {self.method!r}")
        if self.kind == "local" and self.method in ("overlap", "coherent"):
            raise CostConfigError(f"{self.method} supports global cost only")
        if self.shots is not None:
            if self.shots < 1:
                raise CostConfigError("shots must be a positive count")
            if self.method == "direct":
                raise CostConfigError("direct evaluation is exact and takes no shots")

    @property
    def norm_method(self) -> str:
        return "direct" if self.method == "direct" else "hadamard"

    def check_problem(self, problem: LSEProblem) -> None:
        if problem.is_matrix_mode and self.method != "direct":
            raise CostConfigError(
                f"matrix-mode problems support the direct method only, not {self.method!r}"
            )


@dataclass
class CircuitCounter:
    norm: int = 0
    raw: int = 0
    widths: set = field(default_factory=set)

    def record(self, category: str, width: int) -> None:
        if category == "norm":
            self.norm += 1
        else:
            self.raw += 1
        self.widths.add(width)

    @property
    def total(self) -> int:
        return self.norm + self.raw

    @property
    def max_width(self) -> int:
        return max(self.widths, default=0)

    def reset(self) -> None:
        self.norm = self.raw = 0
        self.widths = set()


@dataclass(frozen=True)
class TermEstimates:
    beta: np.ndarray   # (m, m)
    mu: np.ndarray     # (m,)
    gamma: np.ndarray  # (m, m)
    delta: np.ndarray  # (m, m, n)


@dataclass(frozen=True)
class EvaluationBudget:
    circuits_norm: int
    circuits_raw_cost: int
    qubits_required: int
    imaginary_doubling_applied: bool
    base_norm: int = 0
    base_raw_cost: int = 0
    qubits_norm: int = 0
    qubits_raw_cost: int = 0

    @property
    def total(self) -> int:
        return self.circuits_norm + self.circuits_raw_cost


def _nonreal(z: complex) -> bool:
    return abs(z.imag) > 1e-14 * max(1.0, abs(z))


def ancilla_count(m: int) -> int:
    return math.ceil(math.log2(m)) if m > 1 else 0


def count_evaluations(
    method: str, kind: str, m: int, n: int, coefficients: Sequence[complex] | None = None
) -> EvaluationBudget:
    """Closed-form circuit counts and register widths for one cost evaluation.

    Real-part circuits follow the symmetric decompositions; an imaginary-part
    circuit is added for each pair whose coefficient product is non-real.
    ``mu_k`` depends on the (complex) ansatz state, so the global Hadamard
    method always pays for both parts.  ``coefficients`` defaults to all real.
    """
    spec = CostSpec(kind, method)  # validates the combination
    coeffs = np.ones(m, dtype=complex) if coefficients is None else np.asarray(coefficients, complex)
    if coeffs.size != m:
        raise ValueError(f"{coeffs.size} coefficients for m = {m}")
    nonreal_pairs = sum(
        int(_nonreal(coeffs[k] * np.conj(coeffs[l]))) for k in range(m) for l in range(k + 1, m)
    )

    if spec.norm_method == "direct":
        base_norm, imag_norm, q_norm = 1, 0, n
    else:
        base_norm, imag_norm, q_norm = (m * m - m) // 2, nonreal_pairs, n + 1

    if method == "direct":
        base_raw, imag_raw, q_raw = 1, 0, n
    elif method == "hadamard" and kind == "global":
        base_raw, imag_raw, q_raw = m, m, n + 1
    elif method == "hadamard":
        base_raw, imag_raw, q_raw = n * (m * m + m) // 2, n * nonreal_pairs, n + 1
    elif method == "overlap":
        base_raw, imag_raw, q_raw = (m * m + m) // 2, nonreal_pairs, 2 * n + 1
    else:
        base_raw, imag_raw, q_raw = 1, 0, n + ancilla_count(m)

    circuits_norm = base_norm + imag_norm
    circuits_raw = base_raw + imag_raw
    widths = [q for q, c in ((q_norm, circuits_norm), (q_raw, circuits_raw)) if c]
    return EvaluationBudget(
        circuits_norm=circuits_norm,
        circuits_raw_cost=circuits_raw,
        qubits_required=max(widths, default=n),
        imaginary_doubling_applied=bool(imag_norm or imag_raw),
        base_norm=base_norm,
        base_raw_cost=base_raw,
        qubits_norm=q_norm,
        qubits_raw_cost=q_raw,
    )


def compose_cost(raw_numerator: float, norm: float, kind: str = "global") -> float:
    """1 - numerator / <psi|psi>; the leading 1 is never divided by the norm."""
    if kind not in KINDS:
        raise CostConfigError(f"unknown cost kind {kind!r}")
    if np.isnan(norm) or np.isnan(raw_numerator):
        return float("nan")  # diverged upstream; the trainer reports it
    if not np.isfinite(norm) or norm <= 0:
        raise ZeroNormError(f"<psi|psi> estimate is {norm!r}; A annihilates the ansatz state")
    return 1.0 - raw_numerator / norm


def _estimate_from_p0(p0: float, shots: int | None, rng: np.random.Generator) -> float:
    """<Z> on one qubit from its probability of reading 0."""
    p0 = min(max(p0, 0.0), 1.0)
    if shots is None:
        return 2.0 * p0 - 1.0
    return 2.0 * rng.binomial(shots, p0) / shots - 1.0


def hadamard_test(
    phi: StateVector,
    steps: Sequence[tuple],
    imaginary: bool = False,
    shots: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Re (or Im) of <phi|W|phi> from a one-ancilla interference circuit.

    ``steps`` is the gate list of W in application order; each entry is
    ``(matrix, controlled)`` or ``(matrix, controlled, targets)`` with
    ``targets`` indexing the system register (default: all of it).  Only
    controlled steps are conditioned on the ancilla, so ``U X U^dag`` may be
    given with just ``X`` controlled.
    """
    n = phi.n_qubits
    state = qsim.tensor(qsim.init_zero(1), phi)
    state = qsim.apply_gate(state, "H", [0])
    for step in steps:
        matrix, controlled = step[0], step[1]
        targets = [t + 1 for t in step[2]] if len(step) > 2 else list(range(1, n + 1))
        if controlled:
            state = qsim.apply_controlled(state, matrix, targets, [0])
        else:
            state = qsim.apply_operator(state, matrix, targets)
    if imaginary:
        state = qsim.apply_gate(state, "SDG", [0])
    state = qsim.apply_gate(state, "H", [0])
    half = state.dim // 2
    p0 = float(np.sum(np.abs(state.amplitudes[:half]) ** 2))
    return _estimate_from_p0(p0, shots, rng if rng is not None else np.random.default_rng())


@lru_cache(maxsize=None)
def _swap_parity_signs(n: int) -> np.ndarray:
    # register layout: ancilla, reg1 (n), reg2 (n); sign (-1)^(anc + sum_i r1_i r2_i)
    width = 2 * n + 1
    idx = np.arange(2**width)
    bits = (idx[:, None] >> (width - 1 - np.arange(width))) & 1
    parity = bits[:, 0] + (bits[:, 1 : n + 1] & bits[:, n + 1 :]).sum(axis=1)
    signs = np.where(parity % 2, -1.0, 1.0)
    signs.setflags(write=False)
    return signs


def _as_prep(ansatz) -> Prep:
    if isinstance(ansatz, AnsatzParams):
        return partial(apply_ansatz, ansatz)
    if callable(ansatz):
        return ansatz
    raise TypeError(f"expected AnsatzParams or a state-preparation callable, got {type(ansatz)!r}")


class Estimator:
    """Evaluates costs and their building blocks for one problem.

    ``ansatz`` arguments are either :class:`AnsatzParams` or a callable that
    applies V to a state.  Shot-based estimates draw from ``rng``.
    """

    def __init__(
        self,
        problem: LSEProblem,
        spec: CostSpec | None = None,
        rng: np.random.Generator | int | None = None,
        counter: CircuitCounter | None = None,
    ):
        self.problem = problem
        self.spec = spec or CostSpec()
        self.spec.check_problem(problem)
        self.rng = np.random.default_rng(rng)
        self.counter = counter if counter is not None else CircuitCounter()
        self.n = problem.n_qubits
        self._a = assemble_matrix(problem)
        self._ub = problem.rhs.prep_unitary
        self._ub_dag = problem.rhs.prep_dagger
        self._b = problem.rhs.state()
        self._z = qsim.gate_matrix("Z")
        self._scale = float(np.linalg.norm(self._a, 2) ** 2)
        if not problem.is_matrix_mode:
            self._mats = problem.term_matrices
            self._mats_dag = [a.conj().T for a in self._mats]
            self._coeffs = problem.coefficients
            self._scale = float(np.sum(np.abs(self._coeffs) ** 2))

    @property
    def shots(self) -> int | None:
        return self.spec.shots

    def _require_terms(self, what: str) -> None:
        if self.problem.is_matrix_mode:
            raise CostConfigError(f"{what} needs a unitary decomposition; matrix mode supports direct only")

    def _check_index(self, *idx: int) -> None:
        for k in idx:
            if not 0 <= k < self.problem.m:
                raise IndexError(f"term index {k} out of range for m = {self.problem.m}")

    def _htest(self, category: str, phi: StateVector, steps, imaginary: bool) -> float:
        self.counter.record(category, phi.n_qubits + 1)  # hadamard_test adds one ancilla
        return hadamard_test(phi, steps, imaginary, self.shots, self.rng)

    def ansatz_state(self, ansatz) -> StateVector:
        return _as_prep(ansatz)(qsim.init_zero(self.n))

    def psi(self, ansatz) -> StateVector:
        return qsim.apply_matrix(self.ansatz_state(ansatz), self._a)

    # -- beta / norm -------------------------------------------------------

    def beta(self, ansatz, k: int, l: int, imaginary: bool = True, category: str = "norm") -> complex:
        """Hadamard-test estimate of beta_kl; the diagonal is 1 at no circuit cost."""
        self._require_terms("beta")
        self._check_index(k, l)
        if k == l:
            return 1.0 + 0.0j
        v = self.ansatz_state(ansatz)
        steps = [(self._mats[k], True), (self._mats_dag[l], True)]
        re = self._htest(category, v, steps, False)
        im = self._htest(category, v, steps, True) if imaginary else 0.0
        return complex(re, im)

    def norm_psi(self, ansatz, method: str | None = None) -> float:
        """<psi|psi>, either by state evolution or from the upper-triangular betas."""
        method = method or self.spec.norm_method
        if method == "direct":
            psi = self.psi(ansatz)
            self.counter.record("norm", psi.n_qubits)
            return psi.norm_squared()
        if method != "hadamard":
            raise CostConfigError(f"norm supports direct or hadamard, not {method!r}")
        self._require_terms("Hadamard-test norm")
        prep = _as_prep(ansatz)
        c = self._coeffs
        total = float(np.sum(np.abs(c) ** 2))
        for k in range(self.problem.m):
            for l in range(k + 1, self.problem.m):
                p = c[k] * np.conj(c[l])
                b = self.beta(prep, k, l, imaginary=_nonreal(p))
                total += 2.0 * (p.real * b.real - p.imag * b.imag)
        return total

    # -- global numerator --------------------------------------------------

    def _v_matrix(self, prep: Prep) -> np.ndarray:
        return qsim.operator_matrix(prep, self.n)

    def mu(self, ansatz, k: int, v_matrix: np.ndarray | None = None) -> complex:
        """<0| U_b^dag A_k V |0> from controlled V, A_k and U_b^dag."""
        self._require_terms("mu")
        self._check_index(k)
        vm = self._v_matrix(_as_prep(ansatz)) if v_matrix is None else v_matrix
        steps = [(vm, True), (self._mats[k], True), (self._ub_dag, True)]
        zero = qsim.init_zero(self.n)
        re = self._htest("raw", zero, steps, False)
        im = self._htest("raw", zero, steps, True)
        return complex(re, im)

    def overlap_test(self, ansatz, k: int, l: int, imaginary: bool = False) -> float:
        """Re (or Im) of gamma_kl on 2n+1 qubits, with no controlled V or U_b.

        Register 1 holds ``V|0>`` and receives ``A_k`` (ancilla 1) or ``A_l``
        (ancilla 0); register 2 holds ``|b>``.  A transversal CNOT/H pair
        followed by a computational-basis readout gives the SWAP eigenvalue as
        the parity of the pairwise bit products.
        """
        self._require_terms("overlap test")
        self._check_index(k, l)
        n = self.n
        state = qsim.tensor(qsim.init_zero(1), self.ansatz_state(ansatz), self._b)
        self.counter.record("raw", state.n_qubits)
        reg1 = list(range(1, n + 1))
        state = qsim.apply_gate(state, "H", [0])
        state = qsim.apply_controlled(state, self._mats[k], reg1, [0], [1])
        state = qsim.apply_controlled(state, self._mats[l], reg1, [0], [0])
        if imaginary:
            state = qsim.apply_gate(state, "SDG", [0])
        state = qsim.apply_gate(state, "H", [0])
        for i in range(n):
            state = qsim.apply_gate(state, "CNOT", [1 + i, 1 + n + i])
            state = qsim.apply_gate(state, "H", [1 + i])
        signs = _swap_parity_signs(n)
        probs = np.abs(state.amplitudes) ** 2
        if self.shots is None:
            return float(probs @ signs)
        counts = self.rng.multinomial(self.shots, probs / probs.sum())
        return float(counts @ signs) / self.shots

    def gamma(self, ansatz, k: int, l: int, imaginary: bool = True) -> complex:
        re = self.overlap_test(ansatz, k, l, False)
        im = self.overlap_test(ansatz, k, l, True) if imaginary and k != l else 0.0
        return complex(re, im)

    def coherent_p0(self, ansatz) -> float:
        """All-zeros probability of PREP^dag . SELECT . PREP with U_b^dag on the system."""
        self._require_terms("coherent evaluation")
        n, m = self.n, self.problem.m
        c = self._coeffs
        mags = np.abs(c)
        phases = np.where(mags > 0, c / np.where(mags > 0, mags, 1.0), 1.0)
        r = ancilla_count(m)
        v = self.ansatz_state(ansatz)
        if r == 0:
            self.counter.record("raw", v.n_qubits)
            state = qsim.apply_matrix(v, phases[0] * self._mats[0])
            state = qsim.apply_matrix(state, self._ub_dag)
            return float(abs(state.amplitudes[0]) ** 2)
        weights = np.zeros(2**r)
        weights[:m] = np.sqrt(mags / mags.sum())
        prep = completion_unitary(weights)
        anc = list(range(r))
        system = list(range(r, r + n))
        state = qsim.tensor(qsim.init_zero(r), v)
        self.counter.record("raw", state.n_qubits)
        state = qsim.apply_operator(state, prep, anc)
        for k in range(m):
            pattern = [int(bit) for bit in format(k, f"0{r}b")]
            state = qsim.apply_controlled(state, phases[k] * self._mats[k], system, anc, pattern)
        state = qsim.apply_operator(state, prep.conj().T, anc)
        state = qsim.apply_operator(state, self._ub_dag, system)
        return float(abs(state.amplitudes[0]) ** 2)

    def raw_global(self, ansatz, method: str | None = None) -> float:
        """Estimate of |<b|psi>|^2."""
        method = method or self.spec.method
        prep = _as_prep(ansatz)
        m = self.problem.m
        if method == "direct":
            psi = self.psi(prep)
            self.counter.record("raw", psi.n_qubits)
            return abs(qsim.inner_product(self._b, psi)) ** 2
        self._require_terms(f"{method} evaluation")
        c = self._coeffs
        if method == "hadamard":
            vm = self._v_matrix(prep)
            mus = np.array([self.mu(prep, k, vm) for k in range(m)])
            return float(abs(np.dot(c, mus)) ** 2)
        if method == "overlap":
            total = 0.0
            for k in range(m):
                total += abs(c[k]) ** 2 * self.overlap_test(prep, k, k)
                for l in range(k + 1, m):
                    p = c[k] * np.conj(c[l])
                    g = self.gamma(prep, k, l, imaginary=_nonreal(p))
                    total += 2.0 * (p.real * g.real - p.imag * g.imag)
            return total
        if method == "coherent":
            l1 = float(np.sum(np.abs(c)))
            p0 = self.coherent_p0(prep)
            if self.shots is not None:
                p0 = self.rng.binomial(self.shots, min(max(p0, 0.0), 1.0)) / self.shots
            return l1**2 * p0
        raise CostConfigError(f"unknown method {method!r}")

    # -- local numerator ---------------------------------------------------

    def delta(self, ansatz, k: int, l: int, j: int, imaginary: bool = True) -> complex:
        """Hadamard-test estimate of delta_kl^(j); only A_k, Z_j and A_l^dag are controlled."""
        self._require_terms("delta")
        self._check_index(k, l)
        if not 0 <= j < self.n:
            raise IndexError(f"qubit index {j} out of range")
        v = self.ansatz_state(ansatz)
        steps = [
            (self._mats[k], True),
            (self._ub_dag, False),
            (self._z, True, [j]),
            (self._ub, False),
            (self._mats_dag[l], True),
        ]
        re = self._htest("raw", v, steps, False)
        im = self._htest("raw", v, steps, True) if imaginary and k != l else 0.0
        return complex(re, im)

    def raw_local(self, ansatz, method: str | None = None, norm: float | None = None) -> float:
        """Estimate of S_L.

        The Hadamard route writes the projector as (I + Z_j)/2, giving
        S_L = <psi|psi>/2 + (1/2n) sum_j sum_kl c_k conj(c_l) delta_kl^(j);
        pass ``norm`` to reuse an existing <psi|psi> estimate.
        """
        method = method or self.spec.method
        prep = _as_prep(ansatz)
        n = self.n
        if method == "direct":
            phi = qsim.apply_matrix(self.psi(prep), self._ub_dag)
            self.counter.record("raw", phi.n_qubits)
            probs = np.abs(phi.amplitudes.reshape((2,) * n)) ** 2
            total = sum(probs.take(0, axis=j).sum() for j in range(n))
            return float(total / n)
        if method != "hadamard":
            raise CostConfigError(f"{method} supports global cost only")
        self._require_terms("Hadamard-test local cost")
        if norm is None:
            norm = self.norm_psi(prep, "hadamard")
        c = self._coeffs
        m = self.problem.m
        zsum = 0.0
        for j in range(n):
            for k in range(m):
                zsum += abs(c[k]) ** 2 * self.delta(prep, k, k, j).real
                for l in range(k + 1, m):
                    p = c[k] * np.conj(c[l])
                    d = self.delta(prep, k, l, j, imaginary=_nonreal(p))
                    zsum += 2.0 * (p.real * d.real - p.imag * d.imag)
        return 0.5 * norm + zsum / (2 * n)

    # -- composed ----------------------------------------------------------

    def cost_parts(self, ansatz) -> tuple[float, float]:
        """(numerator, <psi|psi>) under ``self.spec``; each is an expectation value in V|0>."""
        prep = _as_prep(ansatz)
        norm = self.norm_psi(prep)
        if self.spec.kind == "global":
            return self.raw_global(prep), norm
        return self.raw_local(prep, norm=norm), norm

    def compose(self, raw: float, norm: float) -> float:
        if np.isnan(norm):
            return float("nan")
        if not np.isfinite(norm) or norm <= ZERO_NORM_RTOL * self._scale:
            raise ZeroNormError(f"<psi|psi> estimate is {norm!r}; A annihilates the ansatz state")
        return compose_cost(raw, norm, self.spec.kind)

    def cost(self, ansatz) -> float:
        """Normalized cost under ``self.spec``."""
        return self.compose(*self.cost_parts(ansatz))

    def term_estimates(self, ansatz) -> TermEstimates:
        """Every beta, mu, gamma and delta with both parts, no symmetry savings."""
        self._require_terms("term estimates")
        prep = _as_prep(ansatz)
        m, n = self.problem.m, self.n
        vm = self._v_matrix(prep)
        beta = np.array([[self.beta(prep, k, l) for l in range(m)] for k in range(m)])
        mu = np.array([self.mu(prep, k, vm) for k in range(m)])
        gamma = np.array([[self.gamma(prep, k, l) for l in range(m)] for k in range(m)])
        delta = np.array(
            [[[self.delta(prep, k, l, j) for j in range(n)] for l in range(m)] for k in range(m)]
        )
        return TermEstimates(beta, mu, gamma, delta)

    def budget(self) -> EvaluationBudget:
        if self.problem.is_matrix_mode:
            return count_evaluations("direct", self.spec.kind, 1, self.n)
        return count_evaluations(
            self.spec.method, self.spec.kind, self.problem.m, self.n, self._coeffs
        )
