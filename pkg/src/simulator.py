"""
Lock-step synchronous network simulator.

This module contains the round scheduler that drives a protocol engine:
each round it collects the engine's outbox, filters it through the fault
plan, delivers the survivors at the round boundary and accounts every
message and round. Transactions are processed one protocol instance at a
time.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Set, Tuple

from .data_models import (
    ClusterConfig, Decision, Envelope, NodeId, Protocol, Transaction, Vote,
)
from .errors import LivenessViolation, SafetyViolation, StalledError
from .faults import EquivocationKey, apply_faults, audit_equivocation

logger = logging.getLogger(__name__)

DEFAULT_LIVENESS_SLACK = 3


class ProtocolEngine:
    """
    Base class for protocol state machines advanced one synchronous round at a time.

    Subclasses implement `begin`, `emit`, `deliver` and the result accessors.
    An engine owns its state exclusively; it is driven by one Simulator.
    """

    protocol: Optional[Protocol] = None
    phase_tags: Tuple[str, ...] = ()
    enforces_atomicity: bool = True

    def __init__(self, cfg: ClusterConfig):
        self.cfg = cfg
        self.plan = cfg.fault_plan
        self.txn: Optional[Transaction] = None
        self.attempt = 0
        self.view_changes = 0

    @property
    def name(self) -> str:
        return self.protocol.value if self.protocol else type(self).__name__.lower()

    def begin(self, txn: Transaction) -> None:
        raise NotImplementedError

    def emit(self, round_index: int) -> List[Envelope]:
        raise NotImplementedError

    def deliver(self, round_index: int, delivered: List[Envelope],
                equivocations: Set[EquivocationKey]) -> bool:
        """Process the round's delivered envelopes; return True if any node progressed."""
        raise NotImplementedError

    @property
    def done(self) -> bool:
        raise NotImplementedError

    def participants(self) -> List[NodeId]:
        """Nodes expected to finalize a decision for each transaction."""
        return self.cfg.nodes()

    def node_decisions(self) -> Dict[NodeId, Decision]:
        raise NotImplementedError

    def outcome(self) -> Vote:
        raise NotImplementedError

    def formula_rounds(self) -> int:
        raise NotImplementedError

    def cache_key(self, txn: Transaction) -> Hashable:
        """Transactions with equal keys produce identical failure-free fragments."""
        return txn.vetoes

    # Helpers shared by the engines

    def is_live(self, node: NodeId, round_index: int) -> bool:
        """Whether `node` receives the envelopes sent in `round_index`."""
        return self.plan.is_alive(node, round_index + 1)

    def can_send(self, node: NodeId, round_index: int) -> bool:
        return self.plan.is_alive(node, round_index)

    def honest_live(self, nodes: Sequence[NodeId], round_index: int) -> List[NodeId]:
        return [node for node in nodes
                if self.plan.is_honest(node) and self.is_live(node, round_index)]


@dataclass(frozen=True)
class RoundReport:
    """What happened in one synchronous round."""
    round: int
    delivered: int
    dropped: int
    equivocations_detected: int

    @property
    def offered(self) -> int:
        return self.delivered + self.dropped


@dataclass
class TxnFragment:
    """Accounting for one transaction."""
    txn_id: int
    rounds: int
    messages_by_phase: Counter
    decisions: Dict[NodeId, Decision]
    outcome: Vote
    view_changes: int = 0
    attempts: int = 1
    atomic: bool = True


@dataclass(frozen=True)
class RunMetrics:
    """
    Aggregate accounting for one run.

    Attributes:
        protocol: Protocol name
        rounds: Total synchronous rounds consumed
        messages_total: Envelopes emitted (delivered or dropped)
        messages_by_phase: Envelopes per phase tag
        decisions: Honest nodes' decisions for the last transaction
        sim_time: rounds * round_latency + messages_total * message_latency
        txn_outcomes: Client-confirmed status per transaction id
        rounds_by_txn: Rounds consumed per transaction id
        view_changes: View changes performed
        atomicity_violations: Transactions whose honest nodes disagree (ring protocol only)
    """
    protocol: str
    rounds: int
    messages_total: int
    messages_by_phase: Dict[str, int]
    decisions: Dict[NodeId, Decision]
    sim_time: int
    txn_outcomes: Dict[int, Vote] = field(default_factory=dict)
    rounds_by_txn: Dict[int, int] = field(default_factory=dict)
    view_changes: int = 0
    atomicity_violations: int = 0

    def __post_init__(self):
        if self.messages_total != sum(self.messages_by_phase.values()):
            raise ValueError("messages_total must equal the sum over phases")

    @property
    def txn_count(self) -> int:
        return len(self.txn_outcomes)

    @property
    def commit_count(self) -> int:
        return sum(1 for value in self.txn_outcomes.values() if value is Vote.COMMIT)

    @property
    def rollback_count(self) -> int:
        return sum(1 for value in self.txn_outcomes.values() if value is Vote.ROLLBACK)


class Simulator:
    """
    Deterministic round scheduler for one cluster.

    This class handles:
    - Round stepping and fault filtering
    - Message and round accounting
    - Equivocation auditing
    - Per-transaction safety and liveness checks
    """

    def __init__(self, cfg: ClusterConfig, trace: bool = False,
                 liveness_slack: int = DEFAULT_LIVENESS_SLACK, memoize: bool = True):
        """
        Initialize the simulator.

        Args:
            cfg: Validated cluster configuration
            trace: Keep every emitted envelope for the trace dump
            liveness_slack: Extra rounds a transaction may take beyond the failure-free formula
            memoize: Reuse per-transaction fragments when no faults are planned
        """
        self.cfg = cfg
        self.plan = cfg.fault_plan
        self.tracing = trace
        self.liveness_slack = liveness_slack
        self.memoize = memoize and not trace and cfg.fault_plan.is_empty
        self.round = 0
        self.complete = False
        self.reports: List[RoundReport] = []
        self.trace: List[Envelope] = []
        self._phase_counts: Counter = Counter()
        self._txn_rounds = 0
        self._cache: Dict[Tuple[str, Hashable], TxnFragment] = {}

    def step(self, engine: ProtocolEngine) -> RoundReport:
        """
        Run one synchronous round.

        Args:
            engine: Protocol engine to advance

        Returns:
            RoundReport for the round

        Raises:
            StalledError: The round produced no messages and no node progressed
        """
        if engine.done:
            self.complete = True
            return RoundReport(self.round, 0, 0, 0)

        round_index = self.round + 1
        outbox = engine.emit(round_index)
        delivered, dropped = apply_faults(outbox, self.plan, round_index)
        equivocations = audit_equivocation(delivered) if not self.plan.is_empty else set()
        progressed = engine.deliver(round_index, delivered, equivocations)

        if not outbox and not progressed:
            raise StalledError(
                f"{engine.name}: round {round_index} emitted nothing and no node progressed"
            )

        self.round = round_index
        self._txn_rounds += 1
        for envelope in outbox:
            self._phase_counts[envelope.phase] += 1
        if self.tracing:
            self.trace.extend(outbox)

        report = RoundReport(round_index, len(delivered), len(dropped), len(equivocations))
        self.reports.append(report)
        logger.debug("Round %d: delivered=%d dropped=%d equivocations=%d",
                     round_index, report.delivered, report.dropped, report.equivocations_detected)
        self._check_liveness(engine)
        return report

    def _check_liveness(self, engine: ProtocolEngine) -> None:
        budget = engine.formula_rounds() + self.liveness_slack
        if self._txn_rounds > budget:
            raise LivenessViolation(
                f"{engine.name}: transaction {engine.txn.id if engine.txn else '?'} "
                f"used {self._txn_rounds} rounds over {engine.attempt + 1} attempt(s), budget {budget}"
            )

    def run_transaction(self, engine: ProtocolEngine, txn: Transaction) -> TxnFragment:
        """
        Drive one protocol instance to completion.

        Args:
            engine: Protocol engine
            txn: Transaction to commit or roll back

        Returns:
            TxnFragment with the transaction's accounting
        """
        if self.memoize:
            key = (engine.name, engine.cache_key(txn))
            cached = self._cache.get(key)
            if cached is not None:
                self.round += cached.rounds
                self._phase_counts.update(cached.messages_by_phase)
                return TxnFragment(txn.id, cached.rounds, cached.messages_by_phase,
                                   cached.decisions, cached.outcome, cached.view_changes,
                                   cached.attempts, cached.atomic)

        start_round = self.round
        start_counts = Counter(self._phase_counts)
        self._txn_rounds = 0
        self.complete = False
        engine.begin(txn)

        while not engine.done:
            self.step(engine)
        self.complete = True

        decisions, atomic = self._check_safety(engine, txn)
        fragment = TxnFragment(
            txn_id=txn.id,
            rounds=self.round - start_round,
            messages_by_phase=self._phase_counts - start_counts,
            decisions=decisions,
            outcome=engine.outcome(),
            view_changes=engine.view_changes,
            attempts=engine.attempt + 1,
            atomic=atomic,
        )
        if self.memoize:
            self._cache[(engine.name, engine.cache_key(txn))] = fragment
        return fragment

    def _check_safety(self, engine: ProtocolEngine,
                      txn: Transaction) -> Tuple[Dict[NodeId, Decision], bool]:
        decisions = engine.node_decisions()
        expected = [node for node in engine.participants()
                    if self.plan.is_honest(node) and self.plan.is_alive(node, self.round + 1)]
        honest = {node: decisions[node] for node in expected if node in decisions}
        values = {decision.value for decision in honest.values()}

        if engine.enforces_atomicity:
            undecided = [node for node in expected if node not in decisions]
            if undecided:
                raise SafetyViolation(
                    f"{engine.name}: transaction {txn.id}: live honest node(s) "
                    f"{', '.join(str(node) for node in undecided)} never finalized"
                )
            if len(values) > 1:
                raise SafetyViolation(
                    f"{engine.name}: transaction {txn.id}: honest nodes finalized "
                    f"{sorted(value.name for value in values)}"
                )
            return honest, True

        atomic = len(values) <= 1
        if not atomic:
            logger.warning("%s: transaction %d finalized inconsistently across ledgers",
                           engine.name, txn.id)
        return honest, atomic

    def run(self, engine: ProtocolEngine, txns: Sequence[Transaction]) -> RunMetrics:
        """
        Process transactions sequentially and aggregate their metrics.

        Args:
            engine: Protocol engine
            txns: Transactions in processing order

        Returns:
            RunMetrics for the whole workload
        """
        logger.info("Running %s on k=%d n=%d f=%d with %d transaction(s)...",
                    engine.name, self.cfg.k, self.cfg.n, self.cfg.f, len(txns))
        start_round = self.round
        start_counts = Counter(self._phase_counts)
        decisions: Dict[NodeId, Decision] = {}
        outcomes: Dict[int, Vote] = {}
        rounds_by_txn: Dict[int, int] = {}
        view_changes = 0
        violations = 0

        for txn in txns:
            fragment = self.run_transaction(engine, txn)
            decisions = fragment.decisions
            outcomes[txn.id] = fragment.outcome
            rounds_by_txn[txn.id] = fragment.rounds
            view_changes += fragment.view_changes
            if not fragment.atomic:
                violations += 1

        rounds = self.round - start_round
        counts = self._phase_counts - start_counts
        messages_by_phase = {phase: counts[phase] for phase in sorted(counts)}
        messages_total = sum(messages_by_phase.values())
        metrics = RunMetrics(
            protocol=engine.name,
            rounds=rounds,
            messages_total=messages_total,
            messages_by_phase=messages_by_phase,
            decisions=dict(sorted(decisions.items())),
            sim_time=rounds * self.cfg.round_latency + messages_total * self.cfg.message_latency,
            txn_outcomes=outcomes,
            rounds_by_txn=rounds_by_txn,
            view_changes=view_changes,
            atomicity_violations=violations,
        )
        logger.info("%s done: %d rounds, %d messages.", engine.name, rounds, messages_total)
        return metrics

    def trace_lines(self) -> List[str]:
        """Trace dump lines in stable (round, src, dst, phase, body) order."""
        lines = [envelope.trace_line() for envelope in self.trace]
        keyed = sorted(zip(self.trace, lines),
                       key=lambda pair: (pair[0].round, pair[0].src, pair[0].dst,
                                         pair[0].phase, pair[1]))
        return [line for _, line in keyed]


def create_simulator(cfg: ClusterConfig, trace: bool = False,
                     liveness_slack: int = DEFAULT_LIVENESS_SLACK) -> Simulator:
    """
    Factory function to create a simulator.

    Args:
        cfg: Validated cluster configuration
        trace: Keep emitted envelopes for the trace dump
        liveness_slack: Extra rounds per transaction beyond the failure-free formula

    Returns:
        Simulator instance
    """
    return Simulator(cfg, trace=trace, liveness_slack=liveness_slack)


def run_to_completion(engine: ProtocolEngine, cfg: ClusterConfig,
                      txns: Sequence[Transaction]) -> RunMetrics:
    """Run a workload on a fresh simulator."""
    return create_simulator(cfg).run(engine, txns)
