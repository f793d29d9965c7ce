"""
Command-line interface.

Subcommands:
    run                 simulate a workload on one configuration
    bench               sweep an experiment grid, write CSV and an SVG plot
    verify-complexity   compare simulated counts with the closed-form table
    topology            per-phase simplicial summary of failure-free runs

Exit codes: 0 ok, 2 configuration error, 3 safety/liveness failure,
4 I/O error, 5 unexpected complexity delta.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from .complexity import (
    complexity_frame, complexity_table, load_expectations, reconcile, reports_frame, unexpected_deltas,
)
from .data_models import ClusterConfig, Protocol, Transaction, max_faulty
from .errors import (
    ConfigError, CoordinatorBlocked, LivenessViolation, NoPrimaryAvailable, SafetyViolation,
    StalledError, UnrecoverableLedger,
)
from .protocols import create_engine, parse_protocols
from .simulator import Simulator, create_simulator
from .topology import topology_report
from .utils import (
    dump_trace, frame_to_csv, load_config, metrics_row, plot_grid_svg, print_run_summary,
    resolve_seed, rows_frame, validate_config, write_csv,
)
from .workload import LedgerPolicy, WorkloadSpec, generate, grid_by_name

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PROTOCOL = 3
EXIT_IO = 4
EXIT_DELTA = 5

DEFAULT_EXPECTATIONS = Path(__file__).resolve().parent.parent / "expectations" / "complexity_deltas.json"
SEED_ENV = "XLEDGER_SEED"

PROTOCOL_FAILURES = (LivenessViolation, SafetyViolation, StalledError, CoordinatorBlocked,
                     NoPrimaryAvailable, UnrecoverableLedger)


def _int_list(text: str) -> List[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _base_config(args: argparse.Namespace, default: ClusterConfig) -> ClusterConfig:
    cfg = load_config(args.config) if args.config else default
    seed = resolve_seed(os.environ.get(SEED_ENV), args.seed, cfg.seed)
    return replace(cfg, seed=seed)


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ----------------------------------------------------------------------------
# run
# ----------------------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    """Simulate a generated workload under each selected protocol; CSV rows on stdout."""
    cfg = _base_config(args, ClusterConfig(k=2, n=4, f=1))
    cfg = validate_config(cfg, allow_over_budget=args.allow_over_budget)
    protocols = parse_protocols(args.protocol)

    spec = WorkloadSpec(args.txns, cfg.k, LedgerPolicy.parse(args.ledgers_per_txn), cfg.seed, args.veto_rate)
    txns = generate(spec)

    rows = []
    for protocol in protocols:
        engine = create_engine(protocol, cfg)
        simulator = Simulator(cfg, trace=bool(args.trace))
        metrics = simulator.run(engine, txns)
        rows.append(metrics_row(metrics, cfg, len(txns)))
        if args.trace:
            path = Path(args.trace)
            if len(protocols) > 1:
                path = path.with_name(f"{path.stem}.{protocol.value}{path.suffix}")
            dump_trace(simulator.trace_lines(), path)
        if not args.quiet:
            print_run_summary(metrics, stream=sys.stderr)

    frame = rows_frame(rows)
    write_csv(frame, sys.stdout)
    if args.out:
        write_csv(frame, _out_dir(args) / "run.csv")
    return EXIT_OK


# ----------------------------------------------------------------------------
# bench
# ----------------------------------------------------------------------------

def run_cell(protocol: str, k: int, n: int, txn_count: int, seed: int,
             round_latency: int = 1, message_latency: int = 0) -> Dict[str, Any]:
    """Failure-free run of one (protocol, grid cell); returns its CSV row."""
    cfg = validate_config(ClusterConfig(k=k, n=n, f=max_faulty(n), seed=seed,
                                        round_latency=round_latency, message_latency=message_latency))
    txns = generate(WorkloadSpec(txn_count, k, seed=seed))
    metrics = create_simulator(cfg).run(create_engine(protocol, cfg), txns)
    return metrics_row(metrics, cfg, txn_count)


def cmd_bench(args: argparse.Namespace) -> int:
    """Sweep one experiment grid; write bench_<grid>.csv and bench_<grid>.svg."""
    grid = grid_by_name(args.grid).scaled(args.max_txns)
    protocols = parse_protocols(args.protocol)
    seed = resolve_seed(os.environ.get(SEED_ENV), args.seed, load_config(args.config).seed if args.config else None)

    jobs = [(protocol.value, cell.k, cell.n, cell.txn_count, seed, args.round_latency, args.message_latency)
            for protocol in protocols for cell in grid.cells()]
    logger.info("Running %s grid: %d cell(s)...", grid.name, len(jobs))

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(run_cell, *zip(*jobs)))
    else:
        rows = [run_cell(*job) for job in jobs]

    frame = rows_frame(rows)
    out = _out_dir(args)
    csv_path = out / f"bench_{grid.name}.csv"
    svg_path = out / f"bench_{grid.name}.svg"
    write_csv(frame, csv_path)
    plot_grid_svg(pd.read_csv(csv_path), grid.axis, svg_path, title=f"{grid.name} grid")
    logger.info("Bench results written to %s and %s", csv_path, svg_path)
    return EXIT_OK


# ----------------------------------------------------------------------------
# verify-complexity
# ----------------------------------------------------------------------------

def single_transaction_metrics(protocol: Protocol, k: int, n: int):
    """Failure-free single-transaction run used for reconciliation."""
    cfg = validate_config(ClusterConfig(k=k, n=n, f=max_faulty(n)))
    txn = Transaction(0, frozenset(range(k)), payload_tag="verify")
    return Simulator(cfg, memoize=False).run(create_engine(protocol, cfg), [txn])


def cmd_verify(args: argparse.Namespace) -> int:
    """Print the closed-form table and reconciliation; exit 5 on an undocumented delta."""
    protocols = parse_protocols(args.protocol)
    expectations = load_expectations(args.expectations or DEFAULT_EXPECTATIONS)

    rows = complexity_table(args.k, args.n, protocols)
    reports = [reconcile(single_transaction_metrics(row.protocol, row.k, row.n), row.protocol, row.k, row.n)
               for row in rows]
    table = complexity_frame(rows)
    reconciliation = reports_frame(reports, expectations)

    if args.format == "csv":
        sys.stdout.write(frame_to_csv(table))
        sys.stdout.write("\n")
        sys.stdout.write(frame_to_csv(reconciliation))
    else:
        print("## Closed-form complexity\n")
        print(table.to_markdown(index=False))
        print("\n## Reconciliation\n")
        print(reconciliation.to_markdown(index=False))

    failures = 0
    for report in reports:
        for component, (observed, expected) in sorted(unexpected_deltas(report, expectations).items()):
            failures += 1
            print(f"unexpected delta: {report.protocol.label} k={report.k} n={report.n} "
                  f"{component}: {observed:+d} (documented {expected:+d})", file=sys.stderr)
    return EXIT_DELTA if failures else EXIT_OK


# ----------------------------------------------------------------------------
# topology
# ----------------------------------------------------------------------------

def cmd_topology(args: argparse.Namespace) -> int:
    """Per-phase vertex, edge, dimension and component counts as CSV."""
    cfg = validate_config(ClusterConfig(k=args.k, n=args.n, f=max_faulty(args.n)))
    frames = [topology_report(protocol, cfg) for protocol in parse_protocols(args.protocol)]
    frame = pd.concat(frames, ignore_index=True)
    write_csv(frame, sys.stdout)
    if args.out:
        write_csv(frame, _out_dir(args) / f"topology_k{args.k}_n{args.n}.csv")
    return EXIT_OK


# ----------------------------------------------------------------------------
# Entry point
# ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON cluster configuration")
    common.add_argument("--seed", type=int, help=f"RNG seed (overridden by ${SEED_ENV})")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--protocol", default="all", help="xlpn22, vldb20, podc18 or all")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings only")

    parser = argparse.ArgumentParser(prog="xledger", description="Cross-ledger commit protocol simulator")
    sub = parser.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", parents=[common], help="simulate one configuration")
    run.add_argument("--txns", type=int, default=1, help="number of transactions")
    run.add_argument("--ledgers-per-txn", default="all", help="'all' or MIN:MAX")
    run.add_argument("--veto-rate", type=float, default=0.0, help="probability of a vetoing ledger")
    run.add_argument("--trace", metavar="PATH", help="write the message trace")
    run.add_argument("--allow-over-budget", action="store_true", help="accept fault plans beyond f")
    run.set_defaults(func=cmd_run)

    bench = sub.add_parser("bench", parents=[common], help="sweep an experiment grid")
    bench.add_argument("--grid", choices=["txn", "node", "ledger"], required=True)
    bench.add_argument("--max-txns", type=int, default=200, help="scale transaction counts (0: full size)")
    bench.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    bench.add_argument("--round-latency", type=int, default=1)
    bench.add_argument("--message-latency", type=int, default=0)
    bench.set_defaults(func=cmd_bench)

    verify = sub.add_parser("verify-complexity", parents=[common], help="reconcile counts with formulas")
    verify.add_argument("--k", type=_int_list, default=[2, 3, 4], help="ledger counts, e.g. 2,3,4")
    verify.add_argument("--n", type=_int_list, default=[4, 16], help="ledger sizes, e.g. 4,16")
    verify.add_argument("--expectations", metavar="PATH", help="documented deltas JSON")
    verify.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    verify.set_defaults(func=cmd_verify)

    topology = sub.add_parser("topology", parents=[common], help="per-phase simplicial summary")
    topology.add_argument("--k", type=int, default=3)
    topology.add_argument("--n", type=int, default=4)
    topology.set_defaults(func=cmd_topology)
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, dispatch, and map failures onto exit codes."""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PROTOCOL_FAILURES as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
