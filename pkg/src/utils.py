"""
Utility functions for the cross-ledger simulator.

This module contains configuration validation and JSON loading, CSV and
trace export, SVG plotting and run summaries.
"""

import io
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from .data_models import (
    ByzantineStrategy, ClusterConfig, FaultPlan, NodeId, Protocol, StrategyKind,
    max_faulty, parse_node,
)
from .errors import ConfigError
from .simulator import RunMetrics

logger = logging.getLogger(__name__)

CONFIG_KEYS = ("k", "n", "f", "seed", "fault_plan", "initiator", "witness",
               "timelock_rounds", "round_latency", "message_latency")
FAULT_PLAN_KEYS = ("byzantine", "crash_at", "initiator_fails_at")

CSV_COLUMNS = ["protocol", "k", "n", "f", "txn_count", "rounds_total", "messages_total",
               "sim_time_units", "decision_commit_count", "decision_rollback_count", "seed"]
PROTOCOL_ORDER = {protocol.value: index for index, protocol in enumerate(Protocol)}


# ----------------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------------

def config_errors(cfg: ClusterConfig, allow_over_budget: bool = False) -> List[ConfigError]:
    """
    Validate a cluster configuration and return every violated bound.

    Args:
        cfg: Configuration to check
        allow_over_budget: Accept fault plans with more than f faulty nodes in a ledger

    Returns:
        List of ConfigErrors (empty if valid)
    """
    errors = []

    if cfg.k < 2:
        errors.append(ConfigError("k", f"need at least 2 ledgers, got {cfg.k}"))
    if cfg.n < 4:
        errors.append(ConfigError("n", f"need at least 4 nodes per ledger, got {cfg.n}"))
    if cfg.f < 0:
        errors.append(ConfigError("f", f"must be non-negative, got {cfg.f}"))
    elif cfg.n >= 1 and cfg.f > max_faulty(cfg.n):
        errors.append(ConfigError("f", f"{cfg.f} exceeds max_faulty({cfg.n}) = {max_faulty(cfg.n)}"))

    if cfg.initiator is not None and not cfg.contains(cfg.initiator):
        errors.append(ConfigError("initiator", f"{cfg.initiator} is outside the cluster"))
    if not 0 <= cfg.witness < max(cfg.k, 1):
        errors.append(ConfigError("witness", f"ledger {cfg.witness} is outside 0..{cfg.k - 1}"))
    if cfg.timelock_rounds < 1:
        errors.append(ConfigError("timelock_rounds", f"must be positive, got {cfg.timelock_rounds}"))
    if cfg.round_latency < 0:
        errors.append(ConfigError("round_latency", f"must be non-negative, got {cfg.round_latency}"))
    if cfg.message_latency < 0:
        errors.append(ConfigError("message_latency", f"must be non-negative, got {cfg.message_latency}"))

    plan = cfg.fault_plan
    for node in sorted(plan.faulty_nodes):
        if not cfg.contains(node):
            errors.append(ConfigError("fault_plan", f"node {node} is outside the cluster"))
    for node, strategy in sorted(plan.byzantine.items()):
        stray = [target for target in strategy.targets if not cfg.contains(target)]
        if stray:
            errors.append(ConfigError("fault_plan", f"{node} omits unknown node(s) {sorted(stray)}"))
    if not allow_over_budget and cfg.f >= 0:
        initiator = cfg.initiator or NodeId(0, 0)
        resolved = plan.resolved(initiator)
        for ledger in sorted({node.ledger for node in resolved.faulty_nodes}):
            count = resolved.faulty_in_ledger(ledger)
            if count > cfg.f:
                errors.append(ConfigError(
                    "fault_plan", f"ledger {ledger} has {count} faulty node(s), budget is f={cfg.f}"
                ))
    return errors


def validate_config(cfg: ClusterConfig, allow_over_budget: bool = False) -> ClusterConfig:
    """
    Validate and normalize a configuration.

    Fills in the default initiator and turns `initiator_fails_at` into a
    crash of that initiator.

    Raises:
        ConfigError: The first violated bound
    """
    errors = config_errors(cfg, allow_over_budget)
    if errors:
        for error in errors[1:]:
            logger.debug("Additional config error: %s", error)
        raise errors[0]
    initiator = cfg.initiator or NodeId(0, 0)
    return replace(cfg, initiator=initiator, fault_plan=cfg.fault_plan.resolved(initiator))


def _node(label: Any, field_name: str) -> NodeId:
    try:
        return parse_node(str(label))
    except ValueError as exc:
        raise ConfigError(field_name, str(exc)) from None


def strategy_from_json(value: Any) -> ByzantineStrategy:
    """'SILENT' or {"strategy": "OMIT", "targets": ["C0"]}."""
    if isinstance(value, str):
        value = {"strategy": value}
    if not isinstance(value, Mapping) or "strategy" not in value:
        raise ConfigError("fault_plan.byzantine", f"invalid strategy: {value!r}")
    try:
        kind = StrategyKind(str(value["strategy"]).upper())
    except ValueError:
        raise ConfigError("fault_plan.byzantine", f"unknown strategy {value['strategy']!r}") from None
    targets = frozenset(_node(label, "fault_plan.byzantine") for label in value.get("targets", ()))
    try:
        return ByzantineStrategy(kind, targets)
    except ValueError as exc:
        raise ConfigError("fault_plan.byzantine", str(exc)) from None


def fault_plan_from_dict(data: Optional[Mapping[str, Any]]) -> FaultPlan:
    if not data:
        return FaultPlan()
    for key in data:
        if key not in FAULT_PLAN_KEYS:
            raise ConfigError(f"fault_plan.{key}", "unknown key")
    byzantine = {_node(label, "fault_plan.byzantine"): strategy_from_json(strategy)
                 for label, strategy in data.get("byzantine", {}).items()}
    crash_at = {_node(label, "fault_plan.crash_at"): int(round_index)
                for label, round_index in data.get("crash_at", {}).items()}
    fails_at = data.get("initiator_fails_at")
    try:
        return FaultPlan(byzantine=byzantine, crash_at=crash_at,
                         initiator_fails_at=int(fails_at) if fails_at is not None else None)
    except ValueError as exc:
        raise ConfigError("fault_plan", str(exc)) from None


def fault_plan_to_dict(plan: FaultPlan) -> Dict[str, Any]:
    byzantine = {}
    for node, strategy in sorted(plan.byzantine.items()):
        if strategy.kind is StrategyKind.OMIT:
            byzantine[node.label] = {"strategy": strategy.kind.value,
                                     "targets": [target.label for target in sorted(strategy.targets)]}
        else:
            byzantine[node.label] = strategy.kind.value
    data: Dict[str, Any] = {"byzantine": byzantine,
                            "crash_at": {node.label: r for node, r in sorted(plan.crash_at.items())}}
    if plan.initiator_fails_at is not None:
        data["initiator_fails_at"] = plan.initiator_fails_at
    return data


def config_from_dict(data: Mapping[str, Any]) -> ClusterConfig:
    """
    Build a ClusterConfig from its JSON form.

    Raises:
        ConfigError: Unknown key, missing key or malformed value
    """
    for key in data:
        if key not in CONFIG_KEYS:
            raise ConfigError(key, "unknown key")
    for key in ("k", "n", "f"):
        if key not in data:
            raise ConfigError(key, "missing")

    options: Dict[str, Any] = {}
    for key in ("k", "n", "f", "seed", "witness", "timelock_rounds", "round_latency", "message_latency"):
        if key in data:
            try:
                options[key] = int(data[key])
            except (TypeError, ValueError):
                raise ConfigError(key, f"expected an integer, got {data[key]!r}") from None
    if data.get("initiator") is not None:
        options["initiator"] = _node(data["initiator"], "initiator")
    options["fault_plan"] = fault_plan_from_dict(data.get("fault_plan"))
    return ClusterConfig(**options)


def load_config(path: Union[str, Path]) -> ClusterConfig:
    """Read a JSON config file (not yet validated)."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc.msg} at line {exc.lineno}") from None
    if not isinstance(data, Mapping):
        raise ConfigError("config", "top level must be a JSON object")
    return config_from_dict(data)


def resolve_seed(env_value: Optional[str], flag: Optional[int], config_seed: Optional[int]) -> int:
    """Seed precedence: environment, then flag, then config, then 0."""
    if env_value not in (None, ""):
        try:
            return int(env_value)
        except ValueError:
            raise ConfigError("XLEDGER_SEED", f"expected an integer, got {env_value!r}") from None
    if flag is not None:
        return flag
    if config_seed is not None:
        return config_seed
    return 0


# ----------------------------------------------------------------------------
# CSV and trace export
# ----------------------------------------------------------------------------

def metrics_row(metrics: RunMetrics, cfg: ClusterConfig, txn_count: int) -> Dict[str, Any]:
    """One CSV row for a (protocol, cell) run."""
    return {
        "protocol": metrics.protocol,
        "k": cfg.k,
        "n": cfg.n,
        "f": cfg.f,
        "txn_count": txn_count,
        "rounds_total": metrics.rounds,
        "messages_total": metrics.messages_total,
        "sim_time_units": metrics.sim_time,
        "decision_commit_count": metrics.commit_count,
        "decision_rollback_count": metrics.rollback_count,
        "seed": cfg.seed,
    }


def rows_frame(rows: Iterable[Mapping[str, Any]]) -> pd.DataFrame:
    """Rows in CSV column order, sorted by protocol order, k, n, txn_count."""
    frame = pd.DataFrame(list(rows), columns=CSV_COLUMNS)
    if frame.empty:
        return frame
    frame["_order"] = frame["protocol"].map(PROTOCOL_ORDER)
    frame = frame.sort_values(["_order", "k", "n", "txn_count"], kind="mergesort")
    return frame.drop(columns="_order").reset_index(drop=True)


def frame_to_csv(frame: pd.DataFrame) -> str:
    """Byte-stable CSV text: header always present, LF line endings."""
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, lineterminator="\n")
    return buffer.getvalue()


def write_csv(frame: pd.DataFrame, destination: Union[str, Path, TextIO]) -> None:
    text = frame_to_csv(frame)
    if hasattr(destination, "write"):
        destination.write(text)
        return
    with open(destination, "w", encoding="utf-8", newline="") as handle:
        handle.write(text)


def dump_trace(lines: Sequence[str], path: Union[str, Path]) -> None:
    """Write trace lines (round, src, dst, phase, body) as tab-separated text."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("round\tsrc\tdst\tphase\tbody\n")
        for line in lines:
            handle.write(line + "\n")
    logger.info("Trace with %d envelope(s) written to %s", len(lines), path)


# ----------------------------------------------------------------------------
# Plots and trends
# ----------------------------------------------------------------------------

def plot_grid_svg(frame: pd.DataFrame, axis: str, path: Union[str, Path], title: str = "") -> None:
    """
    Line plot of sim_time_units against a grid axis, one series per protocol.

    The plot is drawn from the CSV frame alone.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "xledger"
    column = {"txn_count": "txn_count", "n": "n", "k": "k"}[axis]
    labels = {"txn_count": "Number of transactions", "n": "Nodes per ledger", "k": "Number of ledgers"}

    fig, ax = plt.subplots(figsize=(6, 4))
    for protocol in sorted(frame["protocol"].unique(), key=lambda name: PROTOCOL_ORDER.get(name, 99)):
        series = frame[frame["protocol"] == protocol].sort_values(column)
        ax.plot(series[column], series["sim_time_units"], marker="o", label=Protocol.parse(protocol).label)
    ax.set_xlabel(labels[axis])
    ax.set_ylabel("Simulated time (units)")
    if title:
        ax.set_title(title)
    ax.grid(True, linestyle=":", linewidth=0.5)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info("Plot written to %s", path)


def linear_fit(xs: Sequence[float], ys: Sequence[float]) -> Tuple[float, float, float]:
    """
    Least-squares line through the points.

    Returns:
        (slope, intercept, r_squared); r_squared is 1.0 for an exact fit
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if len(x) < 2:
        raise ValueError("Need at least two points for a linear fit")
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if total == 0 else 1.0 - float(np.sum(residual ** 2)) / total
    return float(slope), float(intercept), r_squared


# ----------------------------------------------------------------------------
# Summaries
# ----------------------------------------------------------------------------

def create_run_summary(metrics: RunMetrics) -> Dict[str, Any]:
    """Key statistics of a run."""
    rounds = list(metrics.rounds_by_txn.values())
    return {
        "protocol": metrics.protocol,
        "transactions": metrics.txn_count,
        "rounds": metrics.rounds,
        "messages": metrics.messages_total,
        "sim_time": metrics.sim_time,
        "commits": metrics.commit_count,
        "rollbacks": metrics.rollback_count,
        "rounds_per_txn": {"min": min(rounds), "max": max(rounds)} if rounds else {},
        "view_changes": metrics.view_changes,
        "atomicity_violations": metrics.atomicity_violations,
        "messages_by_phase": dict(metrics.messages_by_phase),
    }


def print_run_summary(metrics: RunMetrics, stream: Optional[TextIO] = None) -> None:
    """Print a formatted run summary (to stderr in the CLI)."""
    summary = create_run_summary(metrics)

    def emit(text: str) -> None:
        print(text, file=stream)

    emit("=" * 60)
    emit(f"RUN SUMMARY: {Protocol.parse(summary['protocol']).label}")
    emit("=" * 60)
    emit(f"Transactions: {summary['transactions']} "
         f"({summary['commits']} committed, {summary['rollbacks']} rolled back)")
    emit(f"Rounds: {summary['rounds']}  Messages: {summary['messages']}  Sim time: {summary['sim_time']}")
    if summary["rounds_per_txn"]:
        emit(f"Rounds per transaction: {summary['rounds_per_txn']['min']}..{summary['rounds_per_txn']['max']}")
    if summary["view_changes"]:
        emit(f"View changes: {summary['view_changes']}")
    if summary["atomicity_violations"]:
        emit(f"Atomicity violations: {summary['atomicity_violations']}")
    emit("Messages by phase:")
    for phase, count in summary["messages_by_phase"].items():
        emit(f"  {phase}: {count}")
