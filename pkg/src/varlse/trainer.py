"""Training loop: parameter-shift gradients, Adam, stagnation-driven growth."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import qsim
from .ansatz import Ansatz, CustomAnsatz, GrowthPolicy, LayeredAnsatz
from .cost import CostSpec, Estimator
from .problem import LSEProblem, load_problem

log = logging.getLogger(__name__)

GRADIENT_MODES = ("parameter-shift", "finite-difference")


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    """Loss became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 50
    learning_rate: float = 0.01
    cost_spec: CostSpec = field(default_factory=CostSpec)
    growth: GrowthPolicy = field(default_factory=GrowthPolicy)
    seed: int | None = None
    abort_loss: float | None = None
    gradient_mode: str = "parameter-shift"
    fd_step: float = 1e-5
    depth: int = 1
    final_shots: int | None = None

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.gradient_mode not in GRADIENT_MODES:
            raise ValueError(f"gradient_mode must be one of {GRADIENT_MODES}")
        if self.depth < 0:
            raise ValueError("depth must be >= 0")
        if self.growth.enabled and self.growth.max_depth < self.depth:
            raise ValueError(f"max_depth {self.growth.max_depth} below initial depth {self.depth}")
        if self.final_shots is not None and self.final_shots < 1:
            raise ValueError("final_shots must be a positive count")


@dataclass
class TrainingTrace:
    losses: list[float]
    growth_events: list[int]
    final_params: np.ndarray
    final_state: qsim.StateVector
    final_probabilities: np.ndarray
    final_loss: float
    circuit_count_total: int
    final_counts: np.ndarray | None = None
    depths: list[int] = field(default_factory=list)
    post_growth_losses: list[float] = field(default_factory=list)
    stop_reason: str = "steps"


def derivatives(
    fn: Callable[[np.ndarray], Sequence[float]],
    theta: np.ndarray,
    mode: str = "parameter-shift",
    h: float = 1e-5,
) -> np.ndarray:
    """Jacobian (parameters x outputs) of a vector of expectation values.

    Parameter shift uses ``[f(t + pi/2) - f(t - pi/2)] / 2``, exact when each
    angle enters through a single Pauli rotation and ``f`` is linear in the
    state's density matrix.  Finite differences use a central step ``h``.
    """
    if mode == "parameter-shift":
        shift, scale = np.pi / 2, 0.5
    elif mode == "finite-difference":
        shift, scale = h, 1.0 / (2 * h)
    else:
        raise ValueError(f"unknown gradient mode {mode!r}")
    theta = np.asarray(theta, dtype=float)
    rows = []
    for p in range(theta.size):
        plus = theta.copy()
        plus[p] += shift
        minus = theta.copy()
        minus[p] -= shift
        rows.append(scale * (np.asarray(fn(plus), float) - np.asarray(fn(minus), float)))
    return np.array(rows)


def gradient(
    parts_fn: Callable[[np.ndarray], tuple[float, float]],
    theta: np.ndarray,
    mode: str = "parameter-shift",
    h: float = 1e-5,
    at: tuple[float, float] | None = None,
) -> np.ndarray:
    """Gradient of ``C = 1 - R / N`` from ``parts_fn(theta) = (R, N)``.

    The cost is a ratio, so the shift rule is applied to ``R`` and ``N``
    separately and combined by the quotient rule.  ``at`` reuses the parts
    already evaluated at ``theta``.
    """
    raw, norm = at if at is not None else parts_fn(theta)
    jac = derivatives(parts_fn, theta, mode, h)
    return (raw * jac[:, 1] - norm * jac[:, 0]) / norm**2


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)

    def expanded(self, is_new: np.ndarray) -> "AdamState":
        """Moments for a grown parameter vector; new entries start at zero."""
        m = np.zeros(is_new.size)
        v = np.zeros(is_new.size)
        m[~is_new] = self.m
        v[~is_new] = self.v
        return AdamState(m, v, self.t)


def adam_step(
    theta: np.ndarray,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, AdamState]:
    if theta.shape != grad.shape or state.m.shape != theta.shape:
        raise ValueError("theta, gradient and optimizer state sizes differ")
    t = state.t + 1
    m = beta1 * state.m + (1 - beta1) * grad
    v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


def _stagnated(history: Sequence[float], policy: GrowthPolicy) -> bool:
    w = policy.window
    if len(history) < 2 * w:
        return False
    recent = min(history[-w:])
    previous = min(history[-2 * w : -w])
    return previous - recent < policy.threshold * abs(previous)


def solve(problem: LSEProblem, config: TrainConfig, ansatz: Ansatz | None = None) -> TrainingTrace:
    """Train the ansatz to minimize the configured cost."""
    spec = config.cost_spec
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    init_rng, grow_rng, shot_rng, sample_rng = (np.random.default_rng(s) for s in seeds)
    if ansatz is None:
        max_depth = config.growth.max_depth if config.growth.enabled else config.depth
        ansatz = LayeredAnsatz(problem.n_qubits, config.depth, max_depth)
    if ansatz.n_qubits != problem.n_qubits:
        raise ValueError(f"ansatz acts on {ansatz.n_qubits} qubits, problem on {problem.n_qubits}")
    estimator = Estimator(problem, spec, shot_rng)
    can_grow = config.growth.enabled and callable(getattr(ansatz, "grow", None))

    def parts_fn(t: np.ndarray) -> tuple[float, float]:
        return estimator.cost_parts(lambda s: ansatz.apply(t, s))

    theta = np.asarray(ansatz.initial(init_rng), dtype=float)
    opt = AdamState.zeros(theta.size)
    losses: list[float] = []
    depths: list[int] = []
    growth_events: list[int] = []
    post_growth: list[float] = []
    window: list[float] = []
    stop_reason = "steps"

    for step in range(config.steps):
        parts = parts_fn(theta)
        loss = estimator.compose(*parts)
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss!r} at step {step}")
        losses.append(loss)
        depths.append(theta.size // (3 * problem.n_qubits) - 1)
        window.append(loss)
        log.debug("step %d loss %.6e", step, loss)
        if config.abort_loss is not None and loss <= config.abort_loss:
            stop_reason = "abort_loss"
            break
        if can_grow and _stagnated(window, config.growth):
            grown = ansatz.grow(theta, grow_rng)
            if grown is not None:
                theta, is_new = grown
                opt = opt.expanded(is_new)
                growth_events.append(step)
                parts = parts_fn(theta)
                post_growth.append(estimator.compose(*parts))
                log.info("step %d: loss stagnated at %.3e, ansatz grown", step, loss)
            window = []
        grad = gradient(parts_fn, theta, config.gradient_mode, config.fd_step, at=parts)
        theta, opt = adam_step(theta, grad, opt, config.learning_rate)

    if stop_reason == "abort_loss":
        final_loss = losses[-1]
    else:
        final_loss = estimator.compose(*parts_fn(theta))
        if not np.isfinite(final_loss):
            raise DivergenceError(f"non-finite final loss {final_loss!r}")

    state = ansatz.apply(theta, qsim.init_zero(problem.n_qubits))
    probs = qsim.probabilities(state)
    counts = None
    if config.final_shots:
        counts = qsim.sample(state, config.final_shots, sample_rng)
        probs = counts / config.final_shots
    return TrainingTrace(
        losses=losses,
        growth_events=growth_events,
        final_params=theta,
        final_state=state,
        final_probabilities=probs,
        final_loss=final_loss,
        circuit_count_total=estimator.counter.total,
        final_counts=counts,
        depths=depths,
        post_growth_losses=post_growth,
        stop_reason=stop_reason,
    )


def _infer_mode(a: Any) -> str:
    if isinstance(a, np.ndarray) and a.ndim == 2:
        return "matrix"
    items = list(a)
    if items and all(isinstance(t, str) for t in items):
        return "pauli"
    if items and all(callable(t) or (isinstance(t, (list, tuple)) and t and isinstance(t[0], dict)) for t in items):
        return "circuit"
    return "unitary"


class VarLSESolver:
    """Convenience front end: build the problem, configure training, ``solve()``.

    ``a`` is a list of Pauli strings, a list of unitary matrices, a list of
    gate procedures, or a single (possibly non-unitary) matrix.
    """

    def __init__(
        self,
        a,
        b,
        coeffs=None,
        method: str = "direct",
        local: bool = False,
        lr: float = 0.01,
        steps: int = 50,
        shots: int | None = None,
        seed: int | None = None,
        depth: int = 1,
        max_depth: int = 10,
        grow: bool = True,
        window: int = 10,
        threshold: float = 1e-3,
        abort_loss: float | None = None,
        final_shots: int | None = None,
        ansatz: Ansatz | None = None,
        n_qubits: int | None = None,
    ):
        mode = _infer_mode(a)
        if mode == "matrix":
            self.problem = load_problem("matrix", b, matrix=a, n_qubits=n_qubits)
        else:
            self.problem = load_problem(mode, b, list(a), coeffs, n_qubits=n_qubits)
        spec = CostSpec("local" if local else "global", method, shots)
        spec.check_problem(self.problem)
        self.config = TrainConfig(
            steps=steps,
            learning_rate=lr,
            cost_spec=spec,
            growth=GrowthPolicy(window, threshold, max(max_depth, depth), grow),
            seed=seed,
            abort_loss=abort_loss,
            depth=depth,
            final_shots=final_shots,
        )
        self.ansatz = ansatz

    def solve(self) -> tuple[np.ndarray, TrainingTrace]:
        trace = solve(self.problem, self.config, self.ansatz)
        return trace.final_state.amplitudes, trace


__all__ = [
    "AdamState",
    "CustomAnsatz",
    "DivergenceError",
    "TrainConfig",
    "TrainingError",
    "TrainingTrace",
    "VarLSESolver",
    "adam_step",
    "derivatives",
    "gradient",
    "solve",
]
