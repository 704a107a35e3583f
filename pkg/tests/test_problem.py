import json
import warnings
from functools import reduce

import numpy as np
import pytest

from varlse import qsim
from varlse.cost import CostSpec, Estimator
from varlse.ansatz import initial_params
from varlse.problem import (
    ProblemError,
    RightHandSide,
    SingularSystemError,
    assemble_matrix,
    classical_solution,
    completion_unitary,
    decompose_matrix_to_pauli,
    load_problem,
    load_problem_file,
    parse_pauli,
    prepare_b,
    problem_from_dict,
    problem_to_dict,
)

from .conftest import random_state_vector, random_unitary

PAULI = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]]),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1, -1]),
}

# closed form: x = |+> (x) (|0>/1.4 + |1>)/sqrt(2) (x) |+>, up to normalization
P_LOW = 1 / (4 * 2.96)
P_HIGH = 1.96 / (4 * 2.96)
REFERENCE_TRUTH = np.array([P_LOW, P_LOW, P_HIGH, P_HIGH, P_LOW, P_LOW, P_HIGH, P_HIGH])


def kron_pauli(label):
    return reduce(np.kron, [PAULI[c] for c in label])


class TestParsePauli:
    def test_single_identity(self):
        mat, gates = parse_pauli("I")
        assert np.array_equal(mat, np.eye(2)) and gates == []

    def test_xzi_on_zero(self):
        mat, gates = parse_pauli("XZI")
        assert np.allclose(mat, kron_pauli("XZI"))
        s = qsim.apply_circuit(qsim.init_zero(3), gates)
        assert np.allclose(s.amplitudes, qsim.basis_state(3, 4).amplitudes)
        assert np.allclose(mat @ qsim.init_zero(3).amplitudes, s.amplitudes)

    @pytest.mark.parametrize("label", ["XQI", "", "AB"])
    def test_invalid(self, label):
        with pytest.raises(ProblemError):
            parse_pauli(label)

    def test_lowercase_accepted(self):
        assert np.allclose(parse_pauli("xy")[0], kron_pauli("XY"))


class TestLoadProblem:
    def test_reference(self, reference):
        assert reference.n_qubits == 3 and reference.m == 3 and reference.mode == "pauli"
        assert np.allclose(reference.coefficients, [1.0, 0.2, 0.2])

    def test_non_unitary_rejected(self):
        with pytest.raises(ProblemError, match="not unitary"):
            load_problem("unitary", [1, 0], [np.diag([1.0, 2.0])])

    def test_matrix_mode(self):
        p = load_problem("matrix", [1, 0], matrix=np.diag([1.0, 2.0]))
        assert p.is_matrix_mode and p.m == 0 and p.n_qubits == 1
        with pytest.raises(Exception, match="direct"):
            Estimator(p, CostSpec("global", "hadamard"))

    def test_non_power_of_two(self):
        with pytest.raises(ProblemError):
            load_problem("matrix", np.ones(3), matrix=np.eye(3))

    def test_inconsistent_sizes(self):
        with pytest.raises(ProblemError):
            load_problem("unitary", np.ones(4) / 2, [np.eye(4), np.eye(2)])
        with pytest.raises(ProblemError):
            load_problem("pauli", np.ones(4) / 2, ["XX", "X"])
        with pytest.raises(ProblemError):
            load_problem("pauli", np.ones(8) / np.sqrt(8), ["XX"])

    def test_empty_decomposition(self):
        with pytest.raises(ProblemError):
            load_problem("pauli", [1, 0], [])

    def test_unknown_mode(self):
        with pytest.raises(ProblemError):
            load_problem("sparse", [1, 0], ["X"])

    def test_coefficient_count_mismatch(self):
        with pytest.raises(ProblemError):
            load_problem("pauli", [1, 0], ["X", "Z"], [1.0])

    def test_circuit_mode_needs_size_for_circuit_b(self):
        with pytest.raises(ProblemError):
            load_problem("circuit", [{"gate": "H", "target": 0}], [[{"gate": "X", "target": 0}]])


class TestAssemble:
    def test_reference(self, reference):
        a = assemble_matrix(reference)
        oracle = kron_pauli("III") + 0.2 * kron_pauli("XZI") + 0.2 * kron_pauli("XII")
        assert np.allclose(a, oracle, atol=1e-15)
        assert a[4, 0] == pytest.approx(0.4)

    def test_single_identity(self):
        p = load_problem("pauli", [1, 0], ["I"], [1.0])
        assert np.array_equal(assemble_matrix(p), np.eye(2))

    def test_cancellation(self):
        p = load_problem("pauli", [1, 0], ["Z", "Z"], [1, -1])
        assert not assemble_matrix(p).any()
        with pytest.raises(SingularSystemError):
            classical_solution(p)


class TestClassicalSolution:
    def test_reference_closed_form(self, reference):
        probs = np.abs(classical_solution(reference)) ** 2
        assert np.allclose(probs, REFERENCE_TRUTH, atol=1e-12)

    def test_reference_matches_reported_bars(self, reference):
        probs = np.abs(classical_solution(reference)) ** 2
        assert np.allclose(np.round(probs, 3), [0.084, 0.084, 0.166, 0.166] * 2)

    def test_identity_returns_b(self, rng):
        b = random_state_vector(rng, 4)
        p = load_problem("pauli", b, ["II"])
        assert np.allclose(classical_solution(p), b)

    def test_zero_matrix(self):
        p = load_problem("matrix", [1, 0], matrix=np.zeros((2, 2)))
        with pytest.raises(SingularSystemError):
            classical_solution(p)

    def test_near_singular(self):
        p = load_problem("matrix", [1, 0], matrix=np.diag([1.0, 1e-14]))
        with pytest.raises(SingularSystemError):
            classical_solution(p)

    @pytest.mark.parametrize("seed", range(10))
    def test_residual(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 4))
        a = rng.normal(size=(2**n, 2**n)) + 1j * rng.normal(size=(2**n, 2**n))
        b = random_state_vector(rng, 2**n)
        p = load_problem("matrix", b, matrix=a)
        x = classical_solution(p)
        ax = a @ x
        scale = np.vdot(ax, b) / np.vdot(ax, ax)
        assert np.linalg.norm(a @ (scale * x) - b) < 1e-8


class TestPauliDecomposition:
    def test_identity(self):
        terms = decompose_matrix_to_pauli(np.eye(8))
        assert [(t.label, t.coefficient) for t in terms] == [("III", 1.0)]

    def test_reference_round_trip(self, reference):
        terms = decompose_matrix_to_pauli(assemble_matrix(reference))
        got = {t.label: t.coefficient for t in terms}
        assert set(got) == {"III", "XZI", "XII"}
        assert got["III"] == pytest.approx(1.0) and got["XZI"] == pytest.approx(0.2)
        assert got["XII"] == pytest.approx(0.2)

    def test_diag_by_hand(self):
        # tr(I diag(1,2))/2 = 1.5, tr(Z diag(1,2))/2 = -0.5
        terms = decompose_matrix_to_pauli(np.diag([1.0, 2.0]))
        assert [(t.label, t.coefficient) for t in terms] == [("I", 1.5), ("Z", -0.5)]

    def test_bad_dimension(self):
        with pytest.raises(ProblemError):
            decompose_matrix_to_pauli(np.eye(3))

    @pytest.mark.parametrize("seed", range(8))
    def test_round_trip_random(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 4))
        mat = rng.normal(size=(2**n, 2**n)) + 1j * rng.normal(size=(2**n, 2**n))
        terms = decompose_matrix_to_pauli(mat)
        p = load_problem("pauli", np.eye(2**n)[0], [t.label for t in terms], [t.coefficient for t in terms])
        assert np.max(np.abs(assemble_matrix(p) - mat)) < 1e-10


class TestRightHandSide:
    def test_uniform_equals_hadamards(self):
        vec = prepare_b(RightHandSide(3, vector=np.ones(8) / np.sqrt(8)))
        gates = [{"gate": "H", "target": q} for q in range(3)]
        circ = prepare_b(RightHandSide(3, procedure=gates))
        assert np.allclose(vec.amplitudes, circ.amplitudes, atol=1e-12)

    def test_basis_vector(self):
        s = prepare_b(RightHandSide(2, vector=[1, 0, 0, 0]))
        assert np.allclose(s.amplitudes, qsim.init_zero(2).amplitudes)

    def test_zero_vector(self):
        with pytest.raises(ProblemError):
            RightHandSide(2, vector=np.zeros(4))

    def test_unnormalized_warns(self):
        with pytest.warns(UserWarning, match="normaliz"):
            rhs = RightHandSide(1, vector=[3.0, 4.0])
        assert np.allclose(rhs.state().amplitudes, [0.6, 0.8])

    @pytest.mark.parametrize("seed", range(5))
    def test_completion_is_unitary_with_b_first(self, seed):
        rng = np.random.default_rng(seed)
        b = random_state_vector(rng, 8)
        u = completion_unitary(b)
        assert np.allclose(u.conj().T @ u, np.eye(8), atol=1e-12)
        assert np.allclose(u[:, 0], b)

    def test_completion_of_basis_vector(self):
        u = completion_unitary(np.eye(4)[2].astype(complex))
        assert np.allclose(u.conj().T @ u, np.eye(4))


class TestModeEquivalence:
    def test_pauli_unitary_circuit_agree(self, reference, rng):
        labels = ["III", "XZI", "XII"]
        coeffs = [1.0, 0.2, 0.2]
        b = [{"gate": "H", "target": q} for q in range(3)]
        as_unitary = load_problem("unitary", b, [kron_pauli(l) for l in labels], coeffs, n_qubits=3)
        as_circuit = load_problem("circuit", b, [parse_pauli(l)[1] for l in labels], coeffs, n_qubits=3)
        as_callable = load_problem(
            "circuit", b, [lambda s, m=kron_pauli(l): qsim.apply_matrix(s, m) for l in labels], coeffs, n_qubits=3
        )
        ref = assemble_matrix(reference)
        params = initial_params(3, 1, rng)
        for kind, method in [("global", "direct"), ("global", "hadamard"), ("local", "hadamard")]:
            spec = CostSpec(kind, method)
            want = Estimator(reference, spec).cost(params)
            for other in (as_unitary, as_circuit, as_callable):
                assert np.max(np.abs(assemble_matrix(other) - ref)) < 1e-10
                assert Estimator(other, spec).cost(params) == pytest.approx(want, abs=1e-8)

    def test_real_valued(self, reference):
        assert reference.real_valued()
        assert not load_problem("pauli", [1, 0], ["Y"]).real_valued()


class TestProblemFiles:
    def test_reference_document(self, tmp_path, reference):
        doc = {
            "n": 3,
            "mode": "pauli",
            "terms": [
                {"pauli": "III", "coeff": [1.0, 0.0]},
                {"pauli": "XZI", "coeff": [0.2, 0.0]},
                {"pauli": "XII", "coeff": [0.2, 0.0]},
            ],
            "b": {"vector": [[1 / np.sqrt(8), 0.0]] * 8},
        }
        path = tmp_path / "reference.json"
        path.write_text(json.dumps(doc))
        p = load_problem_file(path)
        assert np.allclose(assemble_matrix(p), assemble_matrix(reference))
        assert np.allclose(p.rhs.state().amplitudes, reference.rhs.state().amplitudes)

    def test_circuit_b(self):
        doc = {
            "n": 2,
            "mode": "pauli",
            "terms": [{"pauli": "ZZ", "coeff": 1}],
            "b": {"circuit": [{"gate": "H", "target": 0}, {"gate": "H", "target": 1}]},
        }
        p = problem_from_dict(doc)
        assert np.allclose(p.rhs.state().amplitudes, 0.5)

    def test_unitary_and_matrix_modes(self):
        h = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
        doc = {"n": 1, "mode": "unitary", "terms": [{"unitary": h.tolist(), "coeff": [0.5, 0.5]}],
               "b": {"vector": [[1, 0], [0, 0]]}}
        p = problem_from_dict(doc)
        assert np.allclose(assemble_matrix(p), (0.5 + 0.5j) * h)
        doc = {"n": 1, "mode": "matrix", "matrix": [[[1, 0], [0, 0]], [[0, 0], [2, 0]]],
               "b": {"vector": [1, 0]}}
        assert np.allclose(assemble_matrix(problem_from_dict(doc)), np.diag([1, 2]))

    def test_circuit_mode_terms(self):
        doc = {"n": 2, "mode": "circuit", "terms": [{"circuit": [{"gate": "X", "target": 1}], "coeff": 2}],
               "b": {"vector": [1, 0, 0, 0]}}
        p = problem_from_dict(doc)
        assert np.allclose(assemble_matrix(p), 2 * kron_pauli("IX"))

    @pytest.mark.parametrize(
        "doc",
        [
            {"mode": "pauli", "terms": [{"pauli": "X"}]},
            {"mode": "pauli", "terms": [{"unitary": [[1]]}], "b": {"vector": [1, 0]}},
            {"mode": "pauli", "terms": [{"pauli": "X"}], "b": {}},
            {"mode": "matrix", "b": {"vector": [1, 0]}},
            {"n": 2, "mode": "pauli", "terms": [{"pauli": "X"}], "b": {"vector": [1, 0]}},
        ],
    )
    def test_invalid_documents(self, doc):
        with pytest.raises(ProblemError):
            problem_from_dict(doc)

    def test_round_trip_dict(self, reference, rng):
        again = problem_from_dict(json.loads(json.dumps(problem_to_dict(reference))))
        assert np.allclose(assemble_matrix(again), assemble_matrix(reference))
        u = random_unitary(rng, 4)
        p = load_problem("unitary", random_state_vector(rng, 4), [u], [0.3 - 0.1j])
        again = problem_from_dict(json.loads(json.dumps(problem_to_dict(p))))
        assert np.allclose(assemble_matrix(again), assemble_matrix(p))
        assert np.allclose(again.rhs.state().amplitudes, p.rhs.state().amplitudes)
