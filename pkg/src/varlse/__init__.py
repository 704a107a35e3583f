"""Variational solvers for linear systems A x = b, simulated on dense statevectors."""
from .ansatz import AnsatzParams, CustomAnsatz, GrowthPolicy, LayeredAnsatz, apply_ansatz, grow, initial_params
from .cost import CostSpec, Estimator, EvaluationBudget, compose_cost, count_evaluations
from .problem import (
    LSEProblem,
    assemble_matrix,
    classical_solution,
    decompose_matrix_to_pauli,
    example_problem,
    load_problem,
    load_problem_file,
)
from .trainer import TrainConfig, TrainingTrace, VarLSESolver, solve

__version__ = "0.1.0"
