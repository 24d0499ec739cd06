"""Command-line entry point.

    python main.py simulate --config scenario.conf --protocol coop-csi --reps 50 --seed 1
    python main.py analyze idle-field --step 0.5 --out results/run1

Exit codes: 0 success, 1 configuration error, 2 runtime invariant violation.
"""

import argparse
import logging
import sys
from typing import List, Optional

from analysis import AnalysisError, Region
from config import RUN_SETTINGS, ConfigurationError, GenieMode, Protocol, load_scenario
from engine import SimulationInvariantError
from experiments import (
    TABLE_ALIASES,
    TABLES,
    ExperimentError,
    analysis_table,
    genie_comparison,
    load_sweep,
    min_rate_sweep,
    output_path,
    print_summary,
    run_batch,
    saturation_load,
    split_floats,
    write_csv,
)
from metrics import MetricsError

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Cooperative relaying over CSMA: simulation and analysis.")
    parser.add_argument("--log-level", default=RUN_SETTINGS.log_level, help="Logging level (default: %(default)s)")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Run replicated network simulations")
    simulate.add_argument("--config", help="Scenario file with KEY = value lines")
    simulate.add_argument(
        "--protocol", choices=[p.value for p in Protocol], default=None, help="Medium access protocol"
    )
    simulate.add_argument("--reps", type=int, default=1, help="Number of replications (default: 1)")
    simulate.add_argument("--seed", type=int, default=None, help="Seed of the first replication")
    simulate.add_argument("--genie", choices=[g.value for g in GenieMode], default=None, help="Counterfactual mode")
    simulate.add_argument(
        "--compare-genie", action="store_true", help="Compare every genie mode against CSMA-CSI"
    )
    simulate.add_argument("--sweep-min-rate", help="Comma-separated minimum S-D rates (Mbit/s) for relay search")
    simulate.add_argument("--loads", help="Comma-separated offered loads (kbit/s per node)")
    simulate.add_argument("--workers", type=int, default=None, help="Parallel replications")
    simulate.add_argument("--out", help="Output prefix for CSV files")

    analyze = commands.add_parser("analyze", help="Evaluate the analytic model on a grid")
    analyze.add_argument("table", choices=TABLES + tuple(TABLE_ALIASES))
    analyze.add_argument("--config", help="Scenario file with KEY = value lines")
    analyze.add_argument("--region", help="x_min,x_max,y_min,y_max of the interferer area (m)")
    analyze.add_argument("--step", type=float, default=0.5, help="Quadrature step in m (default: %(default)s)")
    analyze.add_argument("--samples", type=int, default=100_000, help="Monte Carlo samples per point")
    analyze.add_argument("--seed", type=int, default=0)
    analyze.add_argument("--delta-sd", type=float, default=60.0, help="Source-destination distance (m)")
    analyze.add_argument("--out", help="Output prefix for CSV files")
    return parser.parse_args(argv)


def _region(text: Optional[str]) -> Region:
    if not text:
        return Region()
    values = split_floats(text)
    if len(values) != 4:
        raise ConfigurationError("--region needs x_min,x_max,y_min,y_max")
    try:
        return Region(*values)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc


def simulate(args: argparse.Namespace) -> None:
    config = load_scenario(args.config, protocol=args.protocol and Protocol(args.protocol),
                           genie=args.genie and GenieMode(args.genie))
    seed = config.seed if args.seed is None else args.seed
    print(f"Scenario: {config.node_count} nodes, {config.area_m:.0f} m, {config.offered_load_kbps:g} kbit/s/node, "
          f"{config.protocol.value}, genie={config.genie.value}, {args.reps} replication(s) from seed {seed}")

    if args.sweep_min_rate:
        frame = min_rate_sweep(config, split_floats(args.sweep_min_rate), args.reps, seed, args.workers)
        path = write_csv(frame, output_path(args.out, "min_rate_sweep"), "min_rate_sweep")
        print(frame.to_string(index=False))
    elif args.loads:
        frame = load_sweep(config, split_floats(args.loads), args.reps, seed, args.workers)
        path = write_csv(frame, output_path(args.out, "load_sweep"), "load_sweep")
        print(frame.to_string(index=False))
        for protocol, group in frame.groupby("protocol"):
            saturation = saturation_load(group["load_kbps"].tolist(), group["throughput_bps"].tolist())
            print(f"  Saturation ({protocol}): {saturation if saturation is not None else 'not reached'}")
    elif args.compare_genie:
        frame = genie_comparison(config, args.reps, seed, args.workers)
        path = write_csv(frame, output_path(args.out, "genie_comparison"), "genie_comparison")
        print(frame.to_string(index=False))
    else:
        frame = run_batch(config, args.reps, seed, args.workers)
        experiment = f"batch_{config.protocol.value}"
        path = write_csv(frame, output_path(args.out, experiment), experiment)
        print_summary(frame, "Batch complete. Summary", ["throughput_bps", "throughput_bps_ci_rel", "pdr",
                                                         "split_fraction", "coop_success_rate", "mean_duration_s"])
    print(f"  Results saved to: {path}")


def analyze(args: argparse.Namespace) -> None:
    config = load_scenario(args.config)
    table = TABLE_ALIASES.get(args.table, args.table)
    frame = analysis_table(
        table,
        config,
        region=_region(args.region),
        step=args.step,
        samples=args.samples,
        seed=args.seed,
        delta_sd=args.delta_sd,
    )
    path = write_csv(frame, output_path(args.out, table), table)
    print(f"{table}: {len(frame)} rows saved to {path}")


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "simulate":
            simulate(args)
        else:
            analyze(args)
    except ConfigurationError as exc:
        print(f"Configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ExperimentError as exc:
        print(f"ERROR: replication seed {exc.seed} aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (SimulationInvariantError, AnalysisError, MetricsError) as exc:
        print(f"ERROR: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
