"""Linear systems A x = b in the four loading modes.

``A`` is held either as a weighted list of unitary terms (``pauli``,
``unitary`` and ``circuit`` modes) or as a raw, possibly non-unitary matrix
(``matrix`` mode, usable only with direct cost evaluation).
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import reduce
from itertools import product
from pathlib import Path
from typing import Any, Callable, Sequence, Union

import numpy as np
import scipy.linalg

from . import qsim
from .qsim import StateVector

MODES = ("circuit", "unitary", "pauli", "matrix")
PAULI_ALPHABET = "IXYZ"
UNITARY_TOL = 1e-10
NORM_TOL = 1e-10
SINGULAR_COND = 1e12

# gate list (JSON-style dicts) or a Python callable mapping StateVector -> StateVector
Procedure = Union[Sequence[dict], Callable[[StateVector], StateVector]]


class ProblemError(ValueError):
    """Invalid or inconsistent linear-system definition."""


class SingularSystemError(ProblemError):
    pass


def _n_from_dim(dim: int) -> int:
    n = dim.bit_length() - 1
    if dim < 2 or 2**n != dim:
        raise ProblemError(f"dimension {dim} is not a power of two >= 2")
    return n


def _run_procedure(proc: Procedure, state: StateVector) -> StateVector:
    if callable(proc):
        return proc(state)
    return qsim.apply_circuit(state, proc)


def procedure_matrix(proc: Procedure, n_qubits: int) -> np.ndarray:
    return qsim.operator_matrix(lambda s: _run_procedure(proc, s), n_qubits)


def parse_pauli(label: str) -> tuple[np.ndarray, list[dict]]:
    """Matrix and per-qubit gate list for a Pauli string; character i acts on qubit i."""
    if not label:
        raise ProblemError("empty Pauli label")
    label = label.upper()
    bad = set(label) - set(PAULI_ALPHABET)
    if bad:
        raise ProblemError(f"invalid Pauli character(s) {sorted(bad)} in {label!r}")
    matrix = reduce(np.kron, [qsim.gate_matrix(p) for p in label])
    gates = [{"gate": p, "target": i} for i, p in enumerate(label) if p != "I"]
    return matrix, gates


@dataclass(frozen=True)
class PauliTerm:
    label: str
    coefficient: complex


@dataclass(frozen=True, eq=False)
class UnitaryTerm:
    """One ``c_k A_k`` of the decomposition.

    ``matrix`` is always populated; ``label`` and ``procedure`` record how the
    term was supplied.
    """

    coefficient: complex
    matrix: np.ndarray
    kind: str
    label: str | None = None
    procedure: Procedure | None = None


@dataclass(frozen=True, eq=False)
class RightHandSide:
    """``|b>`` given either as a vector or as a preparation circuit acting on ``|0...0>``."""

    n_qubits: int
    vector: np.ndarray | None = None
    procedure: Procedure | None = None
    _prep: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if (self.vector is None) == (self.procedure is None):
            raise ProblemError("right-hand side needs exactly one of vector or procedure")
        if self.vector is not None:
            vec = np.asarray(self.vector, dtype=complex).reshape(-1)
            if vec.size != 2**self.n_qubits:
                raise ProblemError(f"b has length {vec.size}, expected {2**self.n_qubits}")
            norm = np.linalg.norm(vec)
            if norm == 0:
                raise ProblemError("right-hand side is the zero vector")
            if abs(norm - 1) > NORM_TOL:
                warnings.warn(f"b has norm {norm:.6g}; normalizing", stacklevel=3)
                vec = vec / norm
            object.__setattr__(self, "vector", vec)
            prep = completion_unitary(vec)
        else:
            prep = procedure_matrix(self.procedure, self.n_qubits)
        object.__setattr__(self, "_prep", prep)

    @property
    def prep_unitary(self) -> np.ndarray:
        """U_b with U_b|0...0> = |b>."""
        return self._prep

    @property
    def prep_dagger(self) -> np.ndarray:
        return self._prep.conj().T

    def state(self) -> StateVector:
        return StateVector(self._prep[:, 0])


def completion_unitary(vec: np.ndarray) -> np.ndarray:
    """Unitary whose first column is the unit vector ``vec``.

    Gram-Schmidt over ``vec`` followed by the standard basis, via QR.
    """
    vec = np.asarray(vec, dtype=complex)
    dim = vec.size
    basis = np.column_stack([vec, np.eye(dim, dtype=complex)])
    q, r = np.linalg.qr(basis)
    # QR fixes columns only up to phase; restore the first one exactly
    q = q[:, :dim] * (r[0, 0] / abs(r[0, 0])) if abs(r[0, 0]) > 0 else q[:, :dim]
    q[:, 0] = vec
    return q


@dataclass(frozen=True, eq=False)
class LSEProblem:
    n_qubits: int
    mode: str
    terms: tuple[UnitaryTerm, ...]
    rhs: RightHandSide
    raw_matrix: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.terms)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([t.coefficient for t in self.terms], dtype=complex)

    @property
    def term_matrices(self) -> list[np.ndarray]:
        return [t.matrix for t in self.terms]

    @property
    def is_matrix_mode(self) -> bool:
        return self.mode == "matrix"

    def real_valued(self) -> bool:
        """True when every coefficient, term matrix and b is real."""
        mats = [t.matrix for t in self.terms] + [self.rhs.prep_unitary[:, 0]]
        return bool(
            np.all(np.imag(self.coefficients) == 0)
            and all(np.all(np.imag(mat) == 0) for mat in mats)
        )


def _as_rhs(rhs: Any, n: int) -> RightHandSide:
    if isinstance(rhs, RightHandSide):
        return rhs
    if callable(rhs):
        return RightHandSide(n, procedure=rhs)
    if isinstance(rhs, (list, tuple)) and rhs and isinstance(rhs[0], dict):
        return RightHandSide(n, procedure=list(rhs))
    return RightHandSide(n, vector=np.asarray(rhs, dtype=complex))


def _check_unitary(mat: np.ndarray, what: str) -> None:
    dev = np.max(np.abs(mat.conj().T @ mat - np.eye(mat.shape[0])))
    if dev > UNITARY_TOL:
        raise ProblemError(f"{what} is not unitary (max |U^dag U - I| = {dev:.3g})")


def load_problem(
    mode: str,
    rhs: Any,
    terms: Sequence[Any] = (),
    coefficients: Sequence[complex] | None = None,
    matrix: np.ndarray | None = None,
    n_qubits: int | None = None,
) -> LSEProblem:
    """Validate and build an :class:`LSEProblem`.

    ``terms`` holds Pauli labels (``pauli``), square matrices (``unitary``) or
    gate procedures (``circuit``).  ``matrix`` is used only in ``matrix`` mode.
    ``rhs`` is a vector, a gate list, a callable, or a ready ``RightHandSide``.
    Circuit mode needs ``n_qubits`` unless ``rhs`` is a vector.
    """
    if mode not in MODES:
        raise ProblemError(f"unknown mode {mode!r}; expected one of {MODES}")

    if mode == "matrix":
        if matrix is None:
            raise ProblemError("matrix mode requires a matrix")
        raw = np.asarray(matrix, dtype=complex)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
            raise ProblemError(f"matrix must be square, got shape {raw.shape}")
        n = _n_from_dim(raw.shape[0])
        if n_qubits is not None and n_qubits != n:
            raise ProblemError(f"matrix implies {n} qubits, declared {n_qubits}")
        return LSEProblem(n, mode, (), _as_rhs(rhs, n), raw)

    terms = list(terms)
    if not terms:
        raise ProblemError("empty unitary decomposition")
    if coefficients is None:
        coefficients = [1.0] * len(terms)
    coefficients = [complex(c) for c in coefficients]
    if len(coefficients) != len(terms):
        raise ProblemError(f"{len(terms)} terms but {len(coefficients)} coefficients")

    built: list[UnitaryTerm] = []
    if mode == "pauli":
        lengths = {len(t) for t in terms}
        if len(lengths) != 1:
            raise ProblemError(f"Pauli labels of differing lengths: {sorted(lengths)}")
        n = lengths.pop()
        for label, c in zip(terms, coefficients):
            mat, gates = parse_pauli(label)
            built.append(UnitaryTerm(c, mat, "pauli", label=label.upper(), procedure=gates))
    elif mode == "unitary":
        mats = [np.asarray(t, dtype=complex) for t in terms]
        shapes = {m.shape for m in mats}
        if len(shapes) != 1:
            raise ProblemError(f"unitary terms of differing shapes: {sorted(shapes)}")
        shape = shapes.pop()
        if len(shape) != 2 or shape[0] != shape[1]:
            raise ProblemError(f"unitary terms must be square, got {shape}")
        n = _n_from_dim(shape[0])
        for k, (mat, c) in enumerate(zip(mats, coefficients)):
            _check_unitary(mat, f"term {k}")
            built.append(UnitaryTerm(c, mat, "unitary"))
    else:
        if n_qubits is None:
            if isinstance(rhs, RightHandSide):
                n_qubits = rhs.n_qubits
            elif not callable(rhs) and not (isinstance(rhs, (list, tuple)) and rhs and isinstance(rhs[0], dict)):
                n_qubits = _n_from_dim(np.asarray(rhs).size)
            else:
                raise ProblemError("circuit mode needs n_qubits when b is given as a circuit")
        n = n_qubits
        for k, (proc, c) in enumerate(zip(terms, coefficients)):
            mat = procedure_matrix(proc, n)
            _check_unitary(mat, f"circuit term {k}")
            built.append(UnitaryTerm(c, mat, "circuit", procedure=proc))

    if n_qubits is not None and n_qubits != n:
        raise ProblemError(f"terms imply {n} qubits, declared {n_qubits}")
    rhs_obj = _as_rhs(rhs, n)
    if rhs_obj.n_qubits != n:
        raise ProblemError(f"b acts on {rhs_obj.n_qubits} qubits, terms on {n}")
    return LSEProblem(n, mode, tuple(built), rhs_obj)


def assemble_matrix(problem: LSEProblem) -> np.ndarray:
    """Dense A = sum_k c_k A_k (or the raw matrix in matrix mode)."""
    if problem.is_matrix_mode:
        return problem.raw_matrix.copy()
    return sum(t.coefficient * t.matrix for t in problem.terms)


def classical_solution(problem: LSEProblem) -> np.ndarray:
    """Normalized x with A x = b, by LU with partial pivoting."""
    a = assemble_matrix(problem)
    b = problem.rhs.state().amplitudes
    if not np.all(np.isfinite(a)) or not np.any(a):
        raise SingularSystemError("system matrix is zero or non-finite")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularSystemError(f"system matrix is numerically singular (cond ~ {cond:.3g})")
    lu, piv = scipy.linalg.lu_factor(a)
    x = scipy.linalg.lu_solve((lu, piv), b)
    return x / np.linalg.norm(x)


def pauli_labels(n_qubits: int):
    return ("".join(p) for p in product(PAULI_ALPHABET, repeat=n_qubits))


def decompose_matrix_to_pauli(matrix: np.ndarray, tol: float = 1e-12) -> list[PauliTerm]:
    """Pauli expansion with c_P = tr(P^dag M) / 2**n; near-zero terms dropped."""
    mat = np.asarray(matrix, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ProblemError(f"matrix must be square, got shape {mat.shape}")
    n = _n_from_dim(mat.shape[0])
    out = []
    for label in pauli_labels(n):
        p, _ = parse_pauli(label)
        # P is Hermitian, so tr(P^dag M) = sum(conj(P) * M) elementwise
        c = np.sum(p.conj() * mat) / 2**n
        if abs(c) >= tol:
            out.append(PauliTerm(label, complex(c)))
    return out


def prepare_b(rhs: RightHandSide) -> StateVector:
    return rhs.state()


# ---------------------------------------------------------------------------
# JSON problem files


def parse_complex(value: Any) -> complex:
    if isinstance(value, (list, tuple)):
        if len(value) != 2:
            raise ProblemError(f"complex number must be [re, im], got {value}")
        return complex(float(value[0]), float(value[1]))
    return complex(value)


def complex_matrix(rows: Any) -> np.ndarray:
    return np.array([[parse_complex(v) for v in row] for row in rows], dtype=complex)


def problem_from_dict(doc: dict) -> LSEProblem:
    """Build a problem from the JSON document layout.

    ``{"n": 3, "mode": "pauli", "terms": [{"pauli": "XZI", "coeff": [0.2, 0]}],
    "b": {"vector": [[re, im], ...]}}``; ``b`` may instead be
    ``{"circuit": [{"gate": "H", "target": 0}, ...]}``.
    """
    try:
        mode = doc["mode"]
        n = doc.get("n")
        b = doc["b"]
    except (KeyError, TypeError) as exc:
        raise ProblemError(f"problem document missing field: {exc}") from None
    if "vector" in b:
        rhs: Any = np.array([parse_complex(v) for v in b["vector"]], dtype=complex)
        if n is not None and rhs.size != 2**n:
            raise ProblemError(f"b has length {rhs.size}, expected {2**n}")
    elif "circuit" in b:
        if n is None:
            raise ProblemError("field 'n' is required when b is a circuit")
        rhs = RightHandSide(n, procedure=list(b["circuit"]))
    else:
        raise ProblemError("field 'b' needs 'vector' or 'circuit'")

    if mode == "matrix":
        if "matrix" not in doc:
            raise ProblemError("matrix mode requires field 'matrix'")
        return load_problem("matrix", rhs, matrix=complex_matrix(doc["matrix"]), n_qubits=n)

    entries = doc.get("terms") or []
    key = {"pauli": "pauli", "unitary": "unitary", "circuit": "circuit"}.get(mode)
    if key is None:
        raise ProblemError(f"unknown mode {mode!r}")
    payload, coeffs = [], []
    for entry in entries:
        if key not in entry:
            raise ProblemError(f"{mode} mode term without '{key}' field: {entry}")
        raw = entry[key]
        payload.append(complex_matrix(raw) if key == "unitary" else raw)
        coeffs.append(parse_complex(entry.get("coeff", 1.0)))
    return load_problem(mode, rhs, payload, coeffs, n_qubits=n)


def load_problem_file(path: str | Path) -> LSEProblem:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ProblemError(f"{path}: invalid JSON ({exc})") from None
    return problem_from_dict(doc)


def _encode(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def problem_to_dict(problem: LSEProblem) -> dict:
    """Inverse of :func:`problem_from_dict` for pauli, unitary and matrix modes."""
    doc: dict = {"n": problem.n_qubits, "mode": problem.mode}
    if problem.rhs.vector is not None:
        doc["b"] = {"vector": [_encode(z) for z in problem.rhs.vector]}
    elif not callable(problem.rhs.procedure):
        doc["b"] = {"circuit": list(problem.rhs.procedure)}
    else:
        doc["b"] = {"vector": [_encode(z) for z in problem.rhs.state().amplitudes]}
    if problem.is_matrix_mode:
        doc["matrix"] = [[_encode(z) for z in row] for row in problem.raw_matrix]
        return doc
    as_gates = problem.mode == "circuit" and not any(callable(t.procedure) for t in problem.terms)
    if problem.mode == "circuit" and not as_gates:
        doc["mode"] = "unitary"
    terms = []
    for t in problem.terms:
        coeff = _encode(t.coefficient)
        if t.kind == "pauli":
            terms.append({"pauli": t.label, "coeff": coeff})
        elif as_gates:
            terms.append({"circuit": list(t.procedure), "coeff": coeff})
        else:
            terms.append({"unitary": [[_encode(z) for z in row] for row in t.matrix], "coeff": coeff})
    doc["terms"] = terms
    return doc


def example_problem() -> LSEProblem:
    """A = III + 0.2 XZI + 0.2 XII with uniform b = H H H |000>."""
    hadamards = [{"gate": "H", "target": q} for q in range(3)]
    return load_problem("pauli", hadamards, ["III", "XZI", "XII"], [1.0, 0.2, 0.2], n_qubits=3)
