#!/usr/bin/env python3
"""
Hybrid State Estimation Toolkit.

Estimators:
- cec (default): complex normal equations with exact zero-injection constraints
- cne: complex normal equations, zero injections as weighted pseudo-measurements
- rec: real polar-coordinate equality-constrained baseline

Typical workflow:
  1. generate       -> synthetic network + meter placement
  2. simulate       -> noisy measurement file from a power-flow state
  3. estimate       -> one estimation run, JSON result
  4. bench / stress -> Monte-Carlo comparison and load stress tables
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from hybrid_se.benchmark import DEFAULT_ESTIMATORS, monte_carlo, stress_sweep
from hybrid_se.complex_kernels import KernelBackend, kernel_benchmark
from hybrid_se.errors import (
    MeasurementError,
    NetworkError,
    PlacementError,
    PowerFlowDivergedError,
    SingularSystemError,
)
from hybrid_se.estimators import ESTIMATOR_MAP, EstimatorConfig, create_estimator
from hybrid_se.fixtures import fixture_1888, fixture_118, placement_instance, small_grid, synthetic_grid
from hybrid_se.measurement_model import ConstraintSpec, measurements_to_jsonl, parse_measurements
from hybrid_se.network_model import Network, load_network
from hybrid_se.power_flow import solve_power_flow
from hybrid_se.result_io import (
    write_comparison_csv,
    write_convergence_csv,
    write_estimation_result,
    write_json,
    write_stress_csv,
)
from hybrid_se.simulation import WEIGHTING_MODES, NoiseSpec, Placement, load_placement, simulate_measurements
from utils.log_utils import configure_logging

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_INPUT_ERROR = 3

FIXTURES = {
    "5": small_grid,
    "118": fixture_118,
    "1888": fixture_1888,
}

INPUT_ERRORS = (
    NetworkError,
    MeasurementError,
    PlacementError,
    FileNotFoundError,
    json.JSONDecodeError,
)


def _network(args: argparse.Namespace) -> Network:
    if getattr(args, "fixture", None):
        if args.fixture not in FIXTURES:
            raise NetworkError(f"unknown fixture {args.fixture!r} (choose from {', '.join(FIXTURES)})")
        return FIXTURES[args.fixture]()
    if not getattr(args, "network", None):
        raise NetworkError("either --network or --fixture is required")
    return load_network(args.network)


def _placement(args: argparse.Namespace, net: Network) -> Placement:
    value = args.placement
    if value is None:
        raise PlacementError("--placement is required")
    if value.upper() in ("A", "B", "C", "D"):
        return placement_instance(net, value, seed=args.seed)
    return load_placement(value)


def _estimator_types(names: Optional[list[str]]):
    if not names:
        return DEFAULT_ESTIMATORS
    return tuple(ESTIMATOR_MAP[name] for name in names)


def _config(args: argparse.Namespace) -> EstimatorConfig:
    return EstimatorConfig(
        tolerance=args.tolerance,
        max_iterations=args.max_iterations,
        damping=getattr(args, "damping", False),
        kernel_backend=KernelBackend(getattr(args, "kernel", "vector")),
        dump_matrix=Path(args.dump_matrix) if getattr(args, "dump_matrix", None) else None,
    )


def _noise(args: argparse.Namespace) -> NoiseSpec:
    if getattr(args, "noise_free", False):
        return NoiseSpec.noiseless(seed=args.seed)
    return NoiseSpec(seed=args.seed, weighting=getattr(args, "weighting", "inverse_variance"))


def estimate_command(args: argparse.Namespace) -> int:
    """Run one estimator on a network and measurement file."""
    net = _network(args)
    meas_path = Path(args.measurements)
    if not meas_path.exists():
        raise FileNotFoundError(f"Measurement file not found: {meas_path}")
    measurements = parse_measurements(meas_path.read_text(encoding="utf-8"), net)

    cfg = _config(args)
    kwargs = {name: getattr(cfg, name) for name in EstimatorConfig.__dataclass_fields__
              if name != "estimator_type"}
    estimator = create_estimator(ESTIMATOR_MAP[args.estimator], **kwargs)
    cs = ConstraintSpec((), net.slack) if args.no_zero_injection else None

    print(f"{estimator.name}: {estimator.description}")
    print(f"Network: {net.name} ({net.n_nodes} nodes, {net.n_branches} branches)")
    print(f"Measurements: {len(measurements)}")

    try:
        result = estimator.estimate(net, measurements, cs)
    except SingularSystemError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED

    status = "converged" if result.converged else "did NOT converge"
    print(f"  {status} in {result.iterations} iterations, objective {result.objective:.6g}")
    print(f"  matrix size {result.matrix_size}, #NZ {result.matrix_nnz}")
    print(f"  max zero-injection mismatch {result.max_constraint_mismatch:.3e}")
    if args.out:
        path = write_estimation_result(result, args.out)
        print(f"  Result: {path}")
    else:
        print(result.to_json())
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def simulate_command(args: argparse.Namespace) -> int:
    """Solve the power flow and write a noisy measurement file."""
    net = _network(args)
    placement = _placement(args, net)
    try:
        flow = solve_power_flow(net)
    except PowerFlowDivergedError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    measurements = simulate_measurements(
        flow.state, net, placement, _noise(args), include_zero_injection=not args.no_zero_injection
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(measurements_to_jsonl(measurements), encoding="utf-8")
    print(f"Power flow converged in {flow.iterations} iterations")
    print(f"Wrote {len(measurements)} measurements to {out}")
    if args.true_state:
        write_json(flow.state.to_dict(), args.true_state)
        print(f"True state: {args.true_state}")
    return EXIT_OK


def bench_command(args: argparse.Namespace) -> int:
    """Monte-Carlo comparison of the estimators."""
    net = _network(args)
    placement = _placement(args, net)
    print(f"Monte-Carlo: {placement.name or net.name}, {args.trials} trials, seed {args.seed}")
    try:
        report = monte_carlo(
            net,
            placement,
            estimators=_estimator_types(args.estimators),
            trials=args.trials,
            noise=_noise(args),
            cfg=_config(args),
            workers=args.workers,
            use_zero_injection=not args.no_zero_injection,
        )
    except PowerFlowDivergedError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    for name, summary in report.summaries.items():
        print(
            f"  {name}: xi_z={summary.xi_z} sigma_x2={summary.sigma_x2} "
            f"iterations={summary.iterations} time={summary.time_ms} ms "
            f"size={summary.matrix_size} nz={summary.matrix_nnz} failures={summary.failures}"
        )
    print(f"  PIF-CNE {report.pif_cne_xi} / {report.pif_cne_sigma}, "
          f"PIF-REC {report.pif_rec_xi} / {report.pif_rec_sigma}, SUF {report.suf}")
    if args.out:
        print(f"  Table: {write_comparison_csv([report], args.out)}")
    if args.json:
        print(f"  Report: {write_json(report.to_dict(include_trials=True), args.json)}")
    return EXIT_OK


def stress_command(args: argparse.Namespace) -> int:
    """Load stress sweep."""
    net = _network(args)
    placement = _placement(args, net)
    estimators = _estimator_types(args.estimators or ["cec", "rec"])
    rows = stress_sweep(
        net,
        placement,
        args.load_mult,
        estimators=estimators,
        cfg=_config(args),
        noise=_noise(args),
        use_zero_injection=not args.no_zero_injection,
    )
    for row in rows:
        if row.feasible:
            print(f"  x{row.multiplier:.4f}: min |V| {row.min_voltage:.4f} at {row.min_voltage_node}, "
                  f"iterations {row.iterations}")
        else:
            print(f"  x{row.multiplier:.4f}: infeasible")
    if args.out:
        print(f"  Table: {write_stress_csv(rows, args.out)}")
    feasible = [row for row in rows if row.feasible]
    if not feasible:
        print("Error: power flow diverged at every load multiplier", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    if args.trace:
        print(f"  Convergence trace: {write_convergence_csv(feasible[-1], args.trace)}")
    not_converged = any(not ok for row in feasible for ok in row.converged.values())
    return EXIT_NOT_CONVERGED if not_converged else EXIT_OK


def kernel_bench_command(args: argparse.Namespace) -> int:
    """Scalar vs vectorized complex multiply throughput."""
    result = kernel_benchmark(size=args.size, repeats=args.repeats, seed=args.seed)
    print(f"Kernel benchmark ({result.size} products, best of {result.repeats})")
    print(f"  scalar: {result.scalar_per_sec:,.0f} mul/s")
    print(f"  vector: {result.vector_per_sec:,.0f} mul/s  (x{result.speedup:.1f})")
    if result.fused_per_sec is None:
        print("  fused:  unavailable (pip install hybrid-se[fma])")
    else:
        print(f"  fused:  {result.fused_per_sec:,.0f} mul/s")
    return EXIT_OK


def generate_command(args: argparse.Namespace) -> int:
    """Write a synthetic network and an A-D placement file."""
    if args.fixture:
        net = _network(args)
    else:
        net = synthetic_grid(args.nodes, args.branches, args.zero_injection, seed=args.seed)
    placement = placement_instance(net, args.instance, seed=args.seed)
    out_network = Path(args.out_network)
    out_network.parent.mkdir(parents=True, exist_ok=True)
    out_network.write_text(net.to_json(), encoding="utf-8")
    print(f"Network: {out_network} ({net.n_nodes} nodes, {net.n_branches} branches, "
          f"{len(net.zero_injection_ids)} zero injections)")
    if args.out_placement:
        out_placement = Path(args.out_placement)
        out_placement.parent.mkdir(parents=True, exist_ok=True)
        out_placement.write_text(placement.to_json(), encoding="utf-8")
        print(f"Placement {args.instance}: {out_placement} "
              f"({placement.n_scada} SCADA, {len(placement.pmu_voltage)} V-PMU, "
              f"{len(placement.pmu_current)} I-PMU)")
    return EXIT_OK


def _add_network_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--network", help="Network JSON file")
    parser.add_argument("--fixture", help=f"Built-in synthetic network: {', '.join(FIXTURES)}")


def _add_solver_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--tolerance", type=float, default=1e-6,
                        help="Convergence tolerance on max |du| (default: 1e-6)")
    parser.add_argument("--max-iterations", type=int, default=25,
                        help="Iteration cap (default: 25)")
    parser.add_argument("--damping", action="store_true",
                        help="Halve steps that increase the objective")
    parser.add_argument("--kernel", choices=[b.value for b in KernelBackend], default="vector",
                        help="Complex kernel backend for assembly (default: vector)")
    parser.add_argument("--no-zero-injection", action="store_true",
                        help="Do not enforce zero injections (slack angle only)")
    parser.add_argument("--seed", type=int, default=0, help="Base RNG seed (default: 0)")


def _add_weighting_option(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--weighting", choices=list(WEIGHTING_MODES), default="inverse_variance",
                        help="Meter weights: inverse noise variance (default) or fixed class weights")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Hybrid SCADA/PMU State Estimation (CEC / CNE / REC)",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Exit codes:
  0  success
  2  estimation or power flow did not converge
  3  input error (network, measurements, placement)

Examples:
  python main.py generate --fixture 118 --instance A --out-network net.json --out-placement a.json
  python main.py simulate --network net.json --placement a.json --out meas.jsonl
  python main.py estimate --network net.json --measurements meas.jsonl --estimator cec
  python main.py bench --fixture 118 --placement A --trials 200 --out table.csv
  python main.py stress --fixture 1888 --placement A --load-mult 1.0 1.05 1.077 --out stress.csv
  python main.py kernel-bench --size 1000000
""",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="Log library progress (-v info, -vv per-iteration debug)")
    subparsers = parser.add_subparsers(dest="command", help="Commands")

    estimator_help = "Estimator: cec (default), cne, rec"

    # Estimate command
    estimate_parser = subparsers.add_parser("estimate", help="Run one estimation")
    _add_network_options(estimate_parser)
    estimate_parser.add_argument("--measurements", required=True, help="Measurement JSON-lines file")
    estimate_parser.add_argument("--estimator", choices=list(ESTIMATOR_MAP), default="cec",
                                 help=estimator_help)
    _add_solver_options(estimate_parser)
    estimate_parser.add_argument("--dump-matrix", help="Write the first assembled matrix (row col re im)")
    estimate_parser.add_argument("-o", "--out", help="Result JSON path (default: print)")
    estimate_parser.set_defaults(func=estimate_command)

    # Simulate command
    simulate_parser = subparsers.add_parser("simulate", help="Write a noisy measurement file")
    _add_network_options(simulate_parser)
    simulate_parser.add_argument("--placement", required=True,
                                 help="Placement JSON file or instance letter A-D")
    simulate_parser.add_argument("--seed", type=int, default=0, help="Noise seed (default: 0)")
    simulate_parser.add_argument("--noise-free", action="store_true", help="Exact measurements")
    _add_weighting_option(simulate_parser)
    simulate_parser.add_argument("--no-zero-injection", action="store_true",
                                 help="Omit ZeroInjectionPseudo rows")
    simulate_parser.add_argument("--true-state", help="Also write the power-flow state as JSON")
    simulate_parser.add_argument("-o", "--out", required=True, help="Measurement file path")
    simulate_parser.set_defaults(func=simulate_command)

    # Bench command
    bench_parser = subparsers.add_parser("bench", help="Monte-Carlo comparison")
    _add_network_options(bench_parser)
    bench_parser.add_argument("--placement", required=True,
                              help="Placement JSON file or instance letter A-D")
    bench_parser.add_argument("--trials", type=int, default=200, help="Number of trials (default: 200)")
    bench_parser.add_argument("--workers", type=int, default=1, help="Worker threads (default: 1)")
    bench_parser.add_argument("--estimators", nargs="+", choices=list(ESTIMATOR_MAP),
                              help="Estimators to compare (default: cec cne rec)")
    bench_parser.add_argument("--noise-free", action="store_true", help="Exact measurements")
    _add_weighting_option(bench_parser)
    _add_solver_options(bench_parser)
    bench_parser.add_argument("-o", "--out", help="CSV table path")
    bench_parser.add_argument("--json", help="Full JSON report path")
    bench_parser.set_defaults(func=bench_command)

    # Stress command
    stress_parser = subparsers.add_parser("stress", help="Load stress sweep")
    _add_network_options(stress_parser)
    stress_parser.add_argument("--placement", required=True,
                               help="Placement JSON file or instance letter A-D")
    stress_parser.add_argument("--load-mult", type=float, nargs="+", required=True,
                               help="Load multipliers (>= 1)")
    stress_parser.add_argument("--estimators", nargs="+", choices=list(ESTIMATOR_MAP),
                               help="Estimators (default: cec rec)")
    stress_parser.add_argument("--noise-free", action="store_true", help="Exact measurements")
    _add_weighting_option(stress_parser)
    _add_solver_options(stress_parser)
    stress_parser.add_argument("-o", "--out", help="Stress table CSV path")
    stress_parser.add_argument("--trace", help="Step-norm trace CSV of the last feasible multiplier")
    stress_parser.set_defaults(func=stress_command)

    # Kernel benchmark command
    kernel_parser = subparsers.add_parser("kernel-bench", help="Complex multiply throughput")
    kernel_parser.add_argument("--size", type=int, default=100_000, help="Products per run")
    kernel_parser.add_argument("--repeats", type=int, default=5, help="Runs per path")
    kernel_parser.add_argument("--seed", type=int, default=0, help="Operand seed")
    kernel_parser.set_defaults(func=kernel_bench_command)

    # Generate command
    generate_parser = subparsers.add_parser("generate", help="Write a synthetic network and placement")
    generate_parser.add_argument("--fixture", help=f"Built-in network: {', '.join(FIXTURES)}")
    generate_parser.add_argument("--nodes", type=int, default=118)
    generate_parser.add_argument("--branches", type=int, default=186)
    generate_parser.add_argument("--zero-injection", type=int, default=10)
    generate_parser.add_argument("--instance", default="A", choices=["A", "B", "C", "D"],
                                 help="Placement instance (default: A)")
    generate_parser.add_argument("--seed", type=int, default=0)
    generate_parser.add_argument("--out-network", required=True, help="Network JSON path")
    generate_parser.add_argument("--out-placement", help="Placement JSON path")
    generate_parser.set_defaults(func=generate_command)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return EXIT_OK

    configure_logging(args.verbose)
    try:
        return args.func(args)
    except INPUT_ERRORS as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
