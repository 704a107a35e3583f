"""Command line: ``varlse solve | decompose | bench``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .ansatz import GrowthPolicy
from .cost import METHODS, CostConfigError, CostSpec, ZeroNormError, count_evaluations
from .problem import (
    LSEProblem,
    ProblemError,
    SingularSystemError,
    assemble_matrix,
    classical_solution,
    complex_matrix,
    decompose_matrix_to_pauli,
    load_problem,
    load_problem_file,
)
from .qsim import basis_label
from .trainer import DivergenceError, TrainConfig, solve

log = logging.getLogger("varlse")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3


def _fmt(x: float) -> str:
    return repr(float(x))


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def _ground_truth(problem: LSEProblem) -> np.ndarray | None:
    try:
        return np.abs(classical_solution(problem)) ** 2
    except SingularSystemError as exc:
        log.warning("no classical reference: %s", exc)
        return None


def _config_from_args(args, seed: int) -> TrainConfig:
    spec = CostSpec("local" if args.local else "global", args.method, args.shots)
    return TrainConfig(
        steps=args.steps,
        learning_rate=args.lr,
        cost_spec=spec,
        growth=GrowthPolicy(args.window, args.threshold, max(args.max_depth, args.depth), not args.no_grow),
        seed=seed,
        abort_loss=args.abort_loss,
        gradient_mode=args.gradient,
        depth=args.depth,
        final_shots=args.shots_final or None,
    )


def run_one(problem: LSEProblem, config: TrainConfig, out_dir: Path, echo: dict) -> dict:
    """Train once and write ``losses.csv`` and ``report.json`` into ``out_dir``."""
    start = time.perf_counter()
    trace = solve(problem, config)
    duration = time.perf_counter() - start

    truth = _ground_truth(problem)
    probs = np.asarray(trace.final_probabilities, dtype=float)
    spec = config.cost_spec
    if problem.is_matrix_mode:
        budget = count_evaluations("direct", spec.kind, 1, problem.n_qubits)
    else:
        budget = count_evaluations(spec.method, spec.kind, problem.m, problem.n_qubits, problem.coefficients)
    report = {
        "config": {**echo, "seed": config.seed},
        "losses": [float(x) for x in trace.losses],
        "final_loss": float(trace.final_loss),
        "stop_reason": trace.stop_reason,
        "growth_events": list(trace.growth_events),
        "final_depth": int(trace.final_params.size // (3 * problem.n_qubits)) - 1,
        "basis_states": [basis_label(i, problem.n_qubits) for i in range(probs.size)],
        "final_probabilities": probs.tolist(),
        "final_counts": None if trace.final_counts is None else trace.final_counts.tolist(),
        "ground_truth_probabilities": None if truth is None else truth.tolist(),
        "total_variation_distance": None if truth is None else total_variation(probs, truth),
        "circuits": {
            "total_executed": int(trace.circuit_count_total),
            "per_cost_evaluation": {
                "norm": budget.circuits_norm,
                "raw_cost": budget.circuits_raw_cost,
                "qubits_required": budget.qubits_required,
                "imaginary_doubling_applied": budget.imaginary_doubling_applied,
            },
        },
        "duration_seconds": duration,
    }
    lines = ["step,loss"] + [f"{i},{_fmt(x)}" for i, x in enumerate(trace.losses)]
    _atomic_write(out_dir / "losses.csv", "\n".join(lines) + "\n")
    _atomic_write(out_dir / "report.json", json.dumps(report, indent=2) + "\n")
    return report


def _run_seed(payload):
    problem_path, config, out_dir, echo = payload
    return run_one(load_problem_file(problem_path), config, out_dir, echo)


def _aggregate(reports: list[dict], out_dir: Path) -> dict:
    steps = max(len(r["losses"]) for r in reports)
    losses = np.full((len(reports), steps), np.nan)
    for i, r in enumerate(reports):
        losses[i, : len(r["losses"])] = r["losses"]
    med = np.nanmedian(losses, axis=0)
    p25, p75 = np.nanpercentile(losses, [25, 75], axis=0)
    mean = np.nanmean(losses, axis=0)
    lines = ["step,loss_median,loss_p25,loss_p75,loss_mean"]
    lines += [f"{s},{_fmt(med[s])},{_fmt(p25[s])},{_fmt(p75[s])},{_fmt(mean[s])}" for s in range(steps)]
    _atomic_write(out_dir / "losses_aggregate.csv", "\n".join(lines) + "\n")

    probs = np.array([r["final_probabilities"] for r in reports])
    finals = [r["final_loss"] for r in reports]
    agg = {
        "seeds": [r["config"]["seed"] for r in reports],
        "final_losses": finals,
        "final_loss_median": float(np.median(finals)),
        "basis_states": reports[0]["basis_states"],
        "probability_median": np.median(probs, axis=0).tolist(),
        "probability_p25": np.percentile(probs, 25, axis=0).tolist(),
        "probability_p75": np.percentile(probs, 75, axis=0).tolist(),
        "ground_truth_probabilities": reports[0]["ground_truth_probabilities"],
    }
    _atomic_write(out_dir / "aggregate.json", json.dumps(agg, indent=2) + "\n")
    return agg


def cmd_solve(args) -> int:
    try:
        problem = load_problem_file(args.problem)
        spec = CostSpec("local" if args.local else "global", args.method, args.shots)
        spec.check_problem(problem)
        configs = [_config_from_args(args, args.seed + i) for i in range(args.seeds)]
    except FileNotFoundError as exc:
        print(f"error: problem file not found: {exc.filename}", file=sys.stderr)
        return EXIT_INVALID
    except (ProblemError, CostConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    echo = {
        "problem": str(args.problem),
        "method": args.method,
        "kind": spec.kind,
        "lr": args.lr,
        "steps": args.steps,
        "shots": args.shots,
        "shots_final": args.shots_final,
        "depth": args.depth,
        "max_depth": args.max_depth,
        "grow": not args.no_grow,
        "gradient": args.gradient,
    }
    out = Path(args.output)
    try:
        if args.seeds == 1:
            reports = [run_one(problem, configs[0], out, echo)]
        else:
            payloads = [(args.problem, c, out / f"seed_{c.seed}", echo) for c in configs]
            if args.jobs > 1:
                with ProcessPoolExecutor(args.jobs) as pool:
                    reports = list(pool.map(_run_seed, payloads))
            else:
                reports = [run_one(problem, c, d, e) for _, c, d, e in payloads]
    except (ZeroNormError, DivergenceError) as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_DIVERGED

    for r in reports:
        tv = r["total_variation_distance"]
        tv_txt = "n/a" if tv is None else f"{tv:.4f}"
        print(
            f"seed {r['config']['seed']}: final loss {r['final_loss']:.6e} "
            f"after {len(r['losses'])} steps, depth {r['final_depth']}, TV to classical {tv_txt}"
        )
    if args.seeds > 1:
        agg = _aggregate(reports, out)
        print(f"median final loss over {args.seeds} seeds: {agg['final_loss_median']:.6e}")
    print(f"artifacts written to {out}")
    return EXIT_OK


def cmd_decompose(args) -> int:
    try:
        with open(args.matrix) as fh:
            doc = json.load(fh)
        rows = doc["matrix"] if isinstance(doc, dict) else doc
        matrix = complex_matrix(rows)
        terms = decompose_matrix_to_pauli(matrix, args.tol)
    except FileNotFoundError as exc:
        print(f"error: matrix file not found: {exc.filename}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    n = matrix.shape[0].bit_length() - 1
    if terms:
        rebuilt = assemble_matrix(
            load_problem("pauli", np.eye(2**n)[0], [t.label for t in terms], [t.coefficient for t in terms])
        )
    else:
        rebuilt = np.zeros_like(matrix)
    err = float(np.max(np.abs(rebuilt - matrix)))
    if args.json:
        payload = [{"pauli": t.label, "coeff": [t.coefficient.real, t.coefficient.imag]} for t in terms]
        print(json.dumps(payload))
    else:
        for t in terms:
            print(f"{t.label}  {t.coefficient.real:+.12g}  {t.coefficient.imag:+.12g}j")
        print(f"# {len(terms)} term(s), round-trip max error {err:.3e}")
    return EXIT_OK if err < 1e-10 else EXIT_DIVERGED


_BENCH_ROWS = [
    ("norm", "direct"),
    ("norm", "hadamard"),
    ("global", "direct"),
    ("global", "hadamard"),
    ("global", "overlap"),
    ("global", "coherent"),
    ("local", "direct"),
    ("local", "hadamard"),
    ("local", "overlap"),
    ("local", "coherent"),
]


def bench_rows(n: int, m: int, coefficients=None) -> list[tuple]:
    """(term, method, qubits, base evaluations, imaginary extra) or n/a entries."""
    rows = []
    for term, method in _BENCH_ROWS:
        kind = "global" if term == "norm" else term
        try:
            b = count_evaluations(method, kind, m, n, coefficients)
        except CostConfigError:
            rows.append((term, method, "n/a", "n/a", "n/a"))
            continue
        if term == "norm":
            rows.append((term, method, b.qubits_norm, b.base_norm, b.circuits_norm - b.base_norm))
        else:
            rows.append((term, method, b.qubits_raw_cost, b.base_raw_cost, b.circuits_raw_cost - b.base_raw_cost))
    return rows


def cmd_bench(args) -> int:
    coeffs = None
    if args.coeffs:
        try:
            coeffs = [complex(c) for c in args.coeffs]
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INVALID
    print(f"{'n':>3} {'m':>3}  {'term':<7}{'method':<10}{'qubits':>7}{'evals':>7}{'+imag':>7}")
    for n in args.n:
        for m in args.m:
            c = coeffs if coeffs is not None and len(coeffs) == m else None
            for term, method, q, e, im in bench_rows(n, m, c):
                print(f"{n:>3} {m:>3}  {term:<7}{method:<10}{q!s:>7}{e!s:>7}{im!s:>7}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="varlse", description="Variational linear-system solver")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="train on a problem file")
    s.add_argument("--problem", required=True)
    s.add_argument("--method", choices=METHODS, default="direct")
    kind = s.add_mutually_exclusive_group()
    kind.add_argument("--global", dest="local", action="store_false", help="global cost (default)")
    kind.add_argument("--local", dest="local", action="store_true", help="local cost")
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--steps", type=int, default=50)
    s.add_argument("--shots", type=int, default=None, help="shots per training circuit (default: exact)")
    s.add_argument("--shots-final", type=int, default=1000, help="shots for the final distribution; 0 for exact")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--depth", type=int, default=1)
    s.add_argument("--max-depth", type=int, default=10)
    s.add_argument("--no-grow", action="store_true")
    s.add_argument("--window", type=int, default=10)
    s.add_argument("--threshold", type=float, default=1e-3)
    s.add_argument("--abort-loss", type=float, default=None)
    s.add_argument("--gradient", choices=["parameter-shift", "finite-difference"], default="parameter-shift")
    s.add_argument("--output", default="varlse-out")
    s.set_defaults(func=cmd_solve)

    d = sub.add_parser("decompose", help="Pauli decomposition of a matrix file")
    d.add_argument("--matrix", required=True)
    d.add_argument("--tol", type=float, default=1e-12)
    d.add_argument("--json", action="store_true", help="emit terms in problem-file format")
    d.set_defaults(func=cmd_decompose)

    b = sub.add_parser("bench", help="circuit and qubit budgets per method")
    b.add_argument("--n", type=int, nargs="+", default=[3])
    b.add_argument("--m", type=int, nargs="+", default=[3])
    b.add_argument("--coeffs", nargs="+", default=None, help="complex coefficients, e.g. 1 0.2 0.2j")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    if args.command == "solve" and (args.seeds < 1 or args.jobs < 1):
        print("error: --seeds and --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
