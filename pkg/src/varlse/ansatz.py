"""Layered Rot_zyz / CZ-chain ansatz with warm-start depth growth.

Circuit for depth ``d``: a rotation layer, then ``d`` blocks of
[nearest-neighbour CZ chain, rotation layer].  Each rotation is
``Rz(a2) Ry(a1) Rz(a0)``, so a depth-``d`` circuit on ``n`` qubits has
``3 n (d + 1)`` angles.

Growing inserts the new block at the *front* of the circuit.  Its rotations
are ``(-a, 0, a)``, which is the identity, and the CZ chain after it acts on
``|0...0>`` where it is trivial, so the prepared state is unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Protocol

import numpy as np

from . import qsim
from .qsim import StateVector

TWO_PI = 2 * np.pi


class MaxDepthReached(Exception):
    """Growth requested beyond the configured maximum depth."""


@dataclass(frozen=True, eq=False)
class AnsatzParams:
    angles: np.ndarray  # shape (depth + 1, n_qubits, 3)

    def __post_init__(self):
        a = np.array(self.angles, dtype=float)
        if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ValueError(f"angles must have shape (depth+1, n_qubits, 3), got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("angles must be finite")
        a.setflags(write=False)
        object.__setattr__(self, "angles", a)

    @property
    def n_qubits(self) -> int:
        return self.angles.shape[1]

    @property
    def depth(self) -> int:
        return self.angles.shape[0] - 1

    @property
    def n_params(self) -> int:
        return self.angles.size

    def flat(self) -> np.ndarray:
        return self.angles.reshape(-1).copy()

    @classmethod
    def from_flat(cls, values: np.ndarray, n_qubits: int) -> "AnsatzParams":
        values = np.asarray(values, dtype=float)
        if values.size % (3 * n_qubits):
            raise ValueError(f"{values.size} angles do not fit {n_qubits} qubits")
        return cls(values.reshape(-1, n_qubits, 3))


@dataclass(frozen=True)
class GrowthPolicy:
    """When and how far the trainer may deepen the ansatz."""

    window: int = 10
    threshold: float = 1e-3
    max_depth: int = 10
    enabled: bool = True

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("growth window must be >= 1")
        if self.threshold < 0:
            raise ValueError("growth threshold must be >= 0")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


def param_count(n_qubits: int, depth: int) -> int:
    return 3 * n_qubits * (depth + 1)


def initial_params(n_qubits: int, depth: int = 0, seed=None) -> AnsatzParams:
    """All angles i.i.d. uniform on [0, 2 pi)."""
    if n_qubits < 1:
        raise ValueError("n_qubits must be >= 1")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    rng = np.random.default_rng(seed)
    return AnsatzParams(rng.uniform(0.0, TWO_PI, size=(depth + 1, n_qubits, 3)))


@lru_cache(maxsize=None)
def _cz_chain_phases(n_qubits: int) -> np.ndarray:
    # product of CZ(i, i+1) is diagonal: sign (-1)^(number of adjacent 11 pairs)
    idx = np.arange(2**n_qubits)
    bits = (idx[:, None] >> (n_qubits - 1 - np.arange(n_qubits))) & 1
    pairs = (bits[:, :-1] & bits[:, 1:]).sum(axis=1)
    phases = np.where(pairs % 2, -1.0, 1.0).astype(complex)
    phases.setflags(write=False)
    return phases


def apply_cz_chain(state: StateVector) -> StateVector:
    return StateVector(state.amplitudes * _cz_chain_phases(state.n_qubits))


def _rotation_layer(state: StateVector, layer: np.ndarray) -> StateVector:
    for q, (a0, a1, a2) in enumerate(layer):
        state = qsim.apply_operator(state, qsim.rot_zyz(a0, a1, a2), [q])
    return state


def apply_ansatz(params: AnsatzParams, state: StateVector) -> StateVector:
    if state.n_qubits != params.n_qubits:
        raise ValueError(f"ansatz on {params.n_qubits} qubits, state has {state.n_qubits}")
    state = _rotation_layer(state, params.angles[0])
    for layer in params.angles[1:]:
        state = apply_cz_chain(state)
        state = _rotation_layer(state, layer)
    return state


def grow(params: AnsatzParams, seed=None, max_depth: int | None = None) -> AnsatzParams:
    """Prepend an identity block with rotations (-a, 0, a), one shared ``a`` ~ U[0, 2 pi)."""
    if max_depth is not None and params.depth >= max_depth:
        raise MaxDepthReached(f"depth {params.depth} is already the maximum {max_depth}")
    rng = np.random.default_rng(seed)
    alpha = rng.uniform(0.0, TWO_PI)
    block = np.tile([-alpha, 0.0, alpha], (1, params.n_qubits, 1))
    return AnsatzParams(np.concatenate([block, params.angles], axis=0))


class Ansatz(Protocol):
    """What the trainer needs from a state-preparation circuit.

    ``grow`` may be absent or return ``None`` when the circuit cannot deepen;
    otherwise it returns the new parameter vector and a boolean mask marking
    the freshly inserted entries.
    """

    n_qubits: int

    def initial(self, rng: np.random.Generator) -> np.ndarray: ...

    def apply(self, theta: np.ndarray, state: StateVector) -> StateVector: ...


class LayeredAnsatz:
    """Flat-vector adapter over :class:`AnsatzParams` for the trainer."""

    def __init__(self, n_qubits: int, depth: int = 1, max_depth: int | None = None):
        if max_depth is not None and max_depth < depth:
            raise ValueError(f"max_depth {max_depth} below initial depth {depth}")
        self.n_qubits = n_qubits
        self.depth = depth
        self.max_depth = max_depth

    def initial(self, rng: np.random.Generator) -> np.ndarray:
        return initial_params(self.n_qubits, self.depth, rng).flat()

    def params(self, theta: np.ndarray) -> AnsatzParams:
        return AnsatzParams.from_flat(theta, self.n_qubits)

    def apply(self, theta: np.ndarray, state: StateVector) -> StateVector:
        return apply_ansatz(self.params(theta), state)

    def grow(self, theta: np.ndarray, rng: np.random.Generator):
        try:
            grown = grow(self.params(theta), rng, self.max_depth)
        except MaxDepthReached:
            return None
        is_new = np.zeros(grown.n_params, dtype=bool)
        is_new[: 3 * self.n_qubits] = True
        return grown.flat(), is_new


class CustomAnsatz:
    """User-supplied circuit: ``apply(theta, state) -> state`` with a fixed parameter count."""

    def __init__(
        self,
        n_qubits: int,
        n_params: int,
        apply: Callable[[np.ndarray, StateVector], StateVector],
        init: Callable[[np.random.Generator], np.ndarray] | None = None,
    ):
        self.n_qubits = n_qubits
        self.n_params = n_params
        self._apply = apply
        self._init = init

    def initial(self, rng: np.random.Generator) -> np.ndarray:
        if self._init is not None:
            return np.asarray(self._init(rng), dtype=float)
        return rng.uniform(0.0, TWO_PI, size=self.n_params)

    def apply(self, theta: np.ndarray, state: StateVector) -> StateVector:
        return self._apply(theta, state)
