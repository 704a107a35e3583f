"""Dense statevector simulation.

Qubit 0 is the most significant bit of a basis index, so the basis label
``"100"`` (index 4) has qubit 0 set.  This matches the character position in
Pauli strings such as ``"XZI"``.

States are immutable from the caller's point of view: every operation returns
a new :class:`StateVector`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

_SQRT2_INV = 1 / np.sqrt(2)

_FIXED_1Q = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
    "H": np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT2_INV,
    "S": np.array([[1, 0], [0, 1j]], dtype=complex),
    "SDG": np.array([[1, 0], [0, -1j]], dtype=complex),
}

_FIXED_2Q = {
    "CZ": np.diag([1, 1, 1, -1]).astype(complex),
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
    "SWAP": np.array(
        [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
    ),
}
_FIXED_2Q["CX"] = _FIXED_2Q["CNOT"]


def rx(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)


def ry(theta: float) -> np.ndarray:
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -s], [s, c]], dtype=complex)


def rz(theta: float) -> np.ndarray:
    return np.array(
        [[np.exp(-0.5j * theta), 0], [0, np.exp(0.5j * theta)]], dtype=complex
    )


def rot_zyz(a0: float, a1: float, a2: float) -> np.ndarray:
    """Rz(a2) @ Ry(a1) @ Rz(a0); ``a0`` acts first."""
    return rz(a2) @ ry(a1) @ rz(a0)


_PARAM_1Q = {"RX": (rx, 1), "RY": (ry, 1), "RZ": (rz, 1), "ROT": (rot_zyz, 3)}

GATE_NAMES = tuple(_FIXED_1Q) + tuple(_FIXED_2Q) + tuple(_PARAM_1Q)


def gate_matrix(name: str, angles: Sequence[float] = ()) -> np.ndarray:
    """Unitary for a named gate, upper-cased lookup."""
    key = name.upper()
    if key in _FIXED_1Q:
        return _FIXED_1Q[key]
    if key in _FIXED_2Q:
        return _FIXED_2Q[key]
    if key in _PARAM_1Q:
        fn, n_angles = _PARAM_1Q[key]
        if len(angles) != n_angles:
            raise ValueError(f"gate {name} takes {n_angles} angle(s), got {len(angles)}")
        return fn(*angles)
    raise ValueError(f"unknown gate {name!r}")


def gate_arity(name: str) -> int:
    return 2 if name.upper() in _FIXED_2Q else 1


@dataclass(frozen=True, eq=False)
class StateVector:
    """Amplitudes over ``n_qubits`` qubits, stored as a read-only array."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        n = int(round(np.log2(amps.size))) if amps.size else -1
        if n < 1 or 2**n != amps.size:
            raise ValueError(f"amplitude count {amps.size} is not 2**n with n >= 1")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def n_qubits(self) -> int:
        return int(self.amplitudes.size).bit_length() - 1

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def __len__(self) -> int:
        return self.amplitudes.size

    def __repr__(self) -> str:
        return f"StateVector(n_qubits={self.n_qubits}, amplitudes={self.amplitudes!r})"


def init_zero(n_qubits: int) -> StateVector:
    if n_qubits < 1:
        raise ValueError(f"n_qubits must be >= 1, got {n_qubits}")
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[0] = 1.0
    return StateVector(amps)


def basis_state(n_qubits: int, index: int) -> StateVector:
    if not 0 <= index < 2**n_qubits:
        raise ValueError(f"basis index {index} out of range for {n_qubits} qubits")
    amps = np.zeros(2**n_qubits, dtype=complex)
    amps[index] = 1.0
    return StateVector(amps)


def tensor(*states: StateVector) -> StateVector:
    """Kronecker product; the first argument occupies the lowest qubit indices."""
    amps = states[0].amplitudes
    for s in states[1:]:
        amps = np.kron(amps, s.amplitudes)
    return StateVector(amps)


def _check_targets(n: int, targets: Sequence[int]) -> list[int]:
    targets = [int(t) for t in targets]
    for t in targets:
        if not 0 <= t < n:
            raise ValueError(f"qubit index {t} out of range for {n} qubits")
    if len(set(targets)) != len(targets):
        raise ValueError(f"duplicate qubit indices in {targets}")
    return targets


def _apply_on_tensor(psi: np.ndarray, op: np.ndarray, targets: list[int]) -> np.ndarray:
    # psi has shape (2,)*n; op acts on len(targets) of its axes
    k = len(targets)
    if k == 1:
        t = targets[0]
        n = psi.ndim
        flat = psi.reshape(2**t, 2, 2 ** (n - t - 1))
        out = np.einsum("ij,ajb->aib", op, flat)
        return out.reshape(psi.shape)
    op_t = op.reshape((2,) * (2 * k))
    out = np.tensordot(op_t, psi, axes=(list(range(k, 2 * k)), targets))
    return np.moveaxis(out, list(range(k)), targets)


def apply_operator(state: StateVector, operator: np.ndarray, targets: Sequence[int]) -> StateVector:
    """Apply a ``2**k x 2**k`` matrix to the ``k`` listed qubits.

    The first listed target is the most significant bit of the operator's
    index.  The matrix need not be unitary.
    """
    n = state.n_qubits
    targets = _check_targets(n, targets)
    op = np.asarray(operator, dtype=complex)
    if op.shape != (2 ** len(targets), 2 ** len(targets)):
        raise ValueError(f"operator shape {op.shape} does not match {len(targets)} target(s)")
    psi = state.amplitudes.reshape((2,) * n)
    return StateVector(_apply_on_tensor(psi, op, targets).reshape(-1))


def apply_gate(
    state: StateVector, gate: str, targets: Sequence[int], angles: Sequence[float] = ()
) -> StateVector:
    """Apply a named gate such as ``"H"``, ``"CZ"`` or ``"ROT"``."""
    targets = list(targets) if not isinstance(targets, int) else [targets]
    if len(targets) != gate_arity(gate):
        raise ValueError(f"gate {gate} acts on {gate_arity(gate)} qubit(s), got {targets}")
    return apply_operator(state, gate_matrix(gate, angles), targets)


def apply_controlled(
    state: StateVector,
    operator: np.ndarray,
    targets: Sequence[int],
    controls: Sequence[int],
    control_pattern: Sequence[int] | None = None,
) -> StateVector:
    """Apply ``operator`` on ``targets`` in the branch where ``controls`` read ``control_pattern``.

    ``control_pattern`` defaults to all ones.
    """
    n = state.n_qubits
    targets = _check_targets(n, targets)
    controls = _check_targets(n, controls)
    if set(targets) & set(controls):
        raise ValueError("control and target qubits overlap")
    if control_pattern is None:
        control_pattern = [1] * len(controls)
    control_pattern = [int(b) for b in control_pattern]
    if len(control_pattern) != len(controls) or any(b not in (0, 1) for b in control_pattern):
        raise ValueError(f"invalid control pattern {control_pattern} for controls {controls}")
    op = np.asarray(operator, dtype=complex)
    if op.shape != (2 ** len(targets), 2 ** len(targets)):
        raise ValueError(f"operator shape {op.shape} does not match {len(targets)} target(s)")

    psi = state.amplitudes.reshape((2,) * n)
    index = [slice(None)] * n
    for c, bit in zip(controls, control_pattern):
        index[c] = bit
    index = tuple(index)
    sub_targets = [t - sum(c < t for c in controls) for t in targets]
    out = psi.copy()
    if sub_targets:
        out[index] = _apply_on_tensor(psi[index], op, sub_targets)
    else:
        out[index] = op[0, 0] * psi[index]
    return StateVector(out.reshape(-1))


def apply_matrix(state: StateVector, matrix: np.ndarray) -> StateVector:
    """Full-register matrix-vector product; no renormalization."""
    mat = np.asarray(matrix, dtype=complex)
    if mat.shape != (state.dim, state.dim):
        raise ValueError(f"matrix shape {mat.shape} does not match state dimension {state.dim}")
    return StateVector(mat @ state.amplitudes)


def inner_product(a: StateVector, b: StateVector) -> complex:
    """<a|b>, conjugating the first argument."""
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def probabilities(state: StateVector) -> np.ndarray:
    weights = np.abs(state.amplitudes) ** 2
    total = weights.sum()
    if total <= 0:
        raise ValueError("zero-norm state has no probability distribution")
    return weights / total


def sample(state: StateVector, shots: int, rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Counts per basis index from ``shots`` independent draws."""
    if shots < 0:
        raise ValueError("shots must be non-negative")
    probs = probabilities(state)
    rng = np.random.default_rng(rng)
    if shots == 0:
        return np.zeros(state.dim, dtype=np.int64)
    return rng.multinomial(shots, probs)


def basis_label(index: int, n_qubits: int) -> str:
    return format(index, f"0{n_qubits}b")


def operator_matrix(apply, n_qubits: int) -> np.ndarray:
    """Matrix of a linear state map, built column by column from basis states."""
    dim = 2**n_qubits
    cols = [apply(basis_state(n_qubits, i)).amplitudes for i in range(dim)]
    return np.stack(cols, axis=1)


def controlled_matrix(
    operator: np.ndarray, n_controls: int = 1, control_pattern: Sequence[int] | None = None
) -> np.ndarray:
    """Block matrix of a controlled operator with the controls as leading qubits."""
    op = np.asarray(operator, dtype=complex)
    d = op.shape[0]
    if control_pattern is None:
        control_pattern = [1] * n_controls
    sel = int("".join(str(int(b)) for b in control_pattern), 2) if n_controls else 0
    out = np.eye(d * 2**n_controls, dtype=complex)
    out[sel * d : (sel + 1) * d, sel * d : (sel + 1) * d] = op
    return out


def apply_circuit(state: StateVector, ops: Sequence[dict], offset: int = 0) -> StateVector:
    """Run a gate list such as ``[{"gate": "H", "target": 0}, {"gate": "CZ", "targets": [0, 1]}]``.

    ``angle``/``angles`` carry rotation parameters.  ``offset`` shifts every
    qubit index, which places the circuit on a sub-register.
    """
    for op in ops:
        if "gate" not in op:
            raise ValueError(f"gate entry without 'gate' key: {op}")
        if "targets" in op:
            targets = list(op["targets"])
        elif "target" in op:
            targets = [op["target"]]
        else:
            raise ValueError(f"gate entry without target: {op}")
        angles = op.get("angles", [op["angle"]] if "angle" in op else [])
        state = apply_gate(state, op["gate"], [t + offset for t in targets], angles)
    return state
