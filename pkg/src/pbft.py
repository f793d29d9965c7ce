"""
Intra-ledger PBFT.

PbftInstance is the per-ledger sub-state machine the baseline protocols
embed (and run in parallel across ledgers). PbftEngine wraps one instance
as a standalone ProtocolEngine.

Counting convention: PRE-PREPARE goes from the primary to all n nodes
including itself, PREPARE and COMMIT are all-to-all including self, and
REPLY goes from every node to the requesting primary, for n + n^2 + n^2 + n
envelopes per failure-free execution.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Set, Tuple

from .data_models import (
    ClusterConfig, Decision, Echo, Envelope, FaultPlan, NodeId, PbftTag, Proposal,
    Transaction, ViewChange, Vote, ledger_members, quorum_size, value_of,
)
from .errors import UnrecoverableLedger, ViewChangeRequired
from .faults import EquivocationKey
from .simulator import ProtocolEngine, RunMetrics, create_simulator

logger = logging.getLogger(__name__)

PBFT_ROUNDS = 4
VIEW_CHANGE_ROUNDS = 2


class PbftPhase(Enum):
    PRE_PREPARE = "PRE_PREPARE"
    PREPARE = "PREPARE"
    COMMIT = "COMMIT"
    REPLY = "REPLY"
    VIEW_CHANGE = "VIEW_CHANGE"
    NEW_VIEW = "NEW_VIEW"
    DONE = "DONE"


def pbft_message_count(n: int) -> int:
    """Envelopes of one failure-free PBFT execution: 2n^2 + 2n."""
    if n < 1:
        raise ValueError(f"Ledger size must be positive: {n}")
    return 2 * n * n + 2 * n


def majority_value(values) -> Optional[Vote]:
    """Most frequent vote; ties go to the higher vote."""
    counts = Counter(value for value in values if value is not None)
    if not counts:
        return None
    return max(counts, key=lambda value: (counts[value], value))


@dataclass
class PbftInstance:
    """
    One PBFT execution on one ledger.

    `carried` is a signed envelope the primary forwards inside its
    PRE-PREPARE instead of a bare proposal, so faulty primaries cannot alter
    the value it certifies.
    """
    ledger: int
    n: int
    f: int
    k: int
    txn_id: int
    proposal: Vote
    plan: FaultPlan = field(default_factory=FaultPlan)
    view: int = 0
    carried: Optional[Envelope] = None
    phase: PbftPhase = PbftPhase.PRE_PREPARE
    pre_prepared: Dict[NodeId, Vote] = field(default_factory=dict)
    certified: Set[NodeId] = field(default_factory=set)
    prepared: Dict[NodeId, Vote] = field(default_factory=dict)
    prepared_from: Dict[NodeId, Set[NodeId]] = field(default_factory=dict)
    committed: Dict[NodeId, Vote] = field(default_factory=dict)
    committed_from: Dict[NodeId, Set[NodeId]] = field(default_factory=dict)
    replies: Dict[NodeId, Vote] = field(default_factory=dict)
    reports: Dict[NodeId, Optional[Vote]] = field(default_factory=dict)
    chosen: Optional[Vote] = None
    view_changes: int = 0
    decision: Optional[Decision] = None

    @property
    def primary(self) -> NodeId:
        return NodeId(self.ledger, self.view % self.n)

    @property
    def members(self) -> List[NodeId]:
        return ledger_members(self.ledger, self.n)

    @property
    def quorum(self) -> int:
        return quorum_size(self.f)

    @property
    def done(self) -> bool:
        return self.phase is PbftPhase.DONE

    def _live(self, node: NodeId, round_index: int) -> bool:
        return self.plan.is_alive(node, round_index + 1)

    def _honest_live(self, round_index: int) -> List[NodeId]:
        return [node for node in self.members
                if self.plan.is_honest(node) and self._live(node, round_index)]

    def emit(self, round_index: int) -> List[Envelope]:
        """Envelopes this instance sends in `round_index`."""
        members = self.members
        if self.phase is PbftPhase.PRE_PREPARE:
            body = Echo(self.carried) if self.carried is not None else Proposal(self.txn_id, self.proposal)
            return [Envelope(round_index, self.primary, member, PbftTag.PRE_PREPARE.value, body)
                    for member in members]

        if self.phase is PbftPhase.PREPARE:
            return [Envelope(round_index, member, other, PbftTag.PREPARE.value, self.pre_prepared[member])
                    for member in members if member in self.pre_prepared
                    for other in members]

        if self.phase is PbftPhase.COMMIT:
            return [Envelope(round_index, member, other, PbftTag.COMMIT.value, self.prepared[member])
                    for member in members if member in self.prepared
                    for other in members]

        if self.phase is PbftPhase.REPLY:
            return [Envelope(round_index, member, self.primary, PbftTag.REPLY.value,
                             Decision(self.committed[member], len(self.committed_from[member])))
                    for member in members if member in self.committed]

        if self.phase is PbftPhase.VIEW_CHANGE:
            return [Envelope(round_index, member, other, PbftTag.VIEW_CHANGE.value,
                             ViewChange(self.ledger, self.view, self.prepared.get(member)))
                    for member in members for other in members]

        if self.phase is PbftPhase.NEW_VIEW:
            announcement = ViewChange(self.ledger, self.view, self.chosen)
            return [Envelope(round_index, self.primary, NodeId(ledger, rank), PbftTag.NEW_VIEW.value,
                             announcement)
                    for ledger in range(self.k) for rank in range(self.n)
                    if NodeId(ledger, rank) != self.primary]

        return []

    def deliver(self, round_index: int, delivered: List[Envelope],
                equivocations: Set[EquivocationKey]) -> bool:
        """Apply the round's delivered envelopes and advance the phase."""
        inbound = [envelope for envelope in delivered
                   if envelope.dst.ledger == self.ledger and self._live(envelope.dst, round_index)]

        if self.phase is PbftPhase.PRE_PREPARE:
            for envelope in inbound:
                self.pre_prepared[envelope.dst] = value_of(envelope.body)
                if self._certifies(envelope.body):
                    self.certified.add(envelope.dst)
            try:
                self._check_primary(round_index, equivocations)
                self.phase = PbftPhase.PREPARE
            except ViewChangeRequired as exc:
                logger.warning("Ledger %d: %s", self.ledger, exc)
                view_change(self, round_index)

        elif self.phase is PbftPhase.PREPARE:
            self._tally(inbound, self.pre_prepared, self.prepared_from)
            for node, sources in self.prepared_from.items():
                if len(sources) >= self.quorum:
                    self.prepared[node] = self.pre_prepared[node]
            self.phase = PbftPhase.COMMIT

        elif self.phase is PbftPhase.COMMIT:
            self._tally(inbound, self.prepared, self.committed_from)
            for node, sources in self.committed_from.items():
                if len(sources) >= self.quorum:
                    self.committed[node] = self.prepared[node]
            uncommitted = [node for node in self._honest_live(round_index) if node not in self.committed]
            if uncommitted:
                logger.warning("Ledger %d: %d honest node(s) failed to commit in view %d",
                               self.ledger, len(uncommitted), self.view)
                view_change(self, round_index)
            else:
                self.phase = PbftPhase.REPLY

        elif self.phase is PbftPhase.REPLY:
            if self._live(self.primary, round_index):
                for envelope in inbound:
                    if envelope.dst == self.primary:
                        self.replies[envelope.src] = value_of(envelope.body)
            self.decision = self._decide()
            self.phase = PbftPhase.DONE

        elif self.phase is PbftPhase.VIEW_CHANGE:
            if self._live(self.primary, round_index):
                for envelope in inbound:
                    if envelope.dst == self.primary:
                        self.reports[envelope.src] = envelope.body.prepared
            self.chosen = majority_value(self.reports.values())
            if self.chosen is None:
                self.chosen = self.proposal
            self.phase = PbftPhase.NEW_VIEW

        elif self.phase is PbftPhase.NEW_VIEW:
            self._reset_view_state()
            if self.plan.is_alive(self.primary, round_index):
                self.pre_prepared[self.primary] = self.chosen
            for envelope in inbound:
                self.pre_prepared[envelope.dst] = envelope.body.prepared
            missing = [node for node in self._honest_live(round_index) if node not in self.pre_prepared]
            if missing:
                view_change(self, round_index)
            else:
                self.phase = PbftPhase.PREPARE

        return True

    def _check_primary(self, round_index: int, equivocations: Set[EquivocationKey]) -> None:
        """
        Raises:
            ViewChangeRequired: The primary equivocated, some honest live node got no
                PRE-PREPARE, or got one that does not match the request being ordered
        """
        if (self.primary, PbftTag.PRE_PREPARE.value, round_index) in equivocations:
            raise ViewChangeRequired(f"primary {self.primary} equivocated in view {self.view}")
        honest = self._honest_live(round_index)
        missing = [node for node in honest if node not in self.pre_prepared]
        if missing:
            raise ViewChangeRequired(
                f"primary {self.primary} left {len(missing)} node(s) without a PRE-PREPARE in view {self.view}"
            )
        forged = [node for node in honest if node not in self.certified]
        if forged:
            raise ViewChangeRequired(
                f"primary {self.primary} sent {len(forged)} node(s) a PRE-PREPARE not matching the request"
            )

    def _certifies(self, body) -> bool:
        """Whether a PRE-PREPARE body matches the request: the carried envelope if any, else the proposal."""
        if self.carried is not None:
            return isinstance(body, Echo) and value_of(body) is value_of(self.carried.body)
        return isinstance(body, Proposal) and body.txn_id == self.txn_id and body.value is self.proposal

    def _tally(self, inbound: List[Envelope], reference: Dict[NodeId, Vote],
               attesters: Dict[NodeId, Set[NodeId]]) -> None:
        for envelope in inbound:
            expected = reference.get(envelope.dst)
            if expected is not None and value_of(envelope.body) == expected:
                attesters.setdefault(envelope.dst, set()).add(envelope.src)

    def _reset_view_state(self) -> None:
        self.pre_prepared = {}
        self.certified = set()
        self.prepared = {}
        self.prepared_from = {}
        self.committed = {}
        self.committed_from = {}
        self.replies = {}
        self.reports = {}

    def _decide(self) -> Decision:
        value = majority_value(self.committed.values())
        if value is None:
            value = self.proposal
        matching_replies = sum(1 for reply in self.replies.values() if reply == value)
        if matching_replies < self.f + 1:
            logger.warning("Ledger %d: requester %s holds %d matching replies, needs %d",
                           self.ledger, self.primary, matching_replies, self.f + 1)
            backing = sum(1 for committed in self.committed.values() if committed == value)
        else:
            backing = matching_replies
        return Decision(value, backing)

    def node_decisions(self) -> Dict[NodeId, Decision]:
        return {node: Decision(value, len(self.committed_from.get(node, ())))
                for node, value in sorted(self.committed.items())}


def view_change(instance: PbftInstance, round_index: int) -> int:
    """
    Replace the ledger's primary.

    Bumps the view so the new primary is rank (view mod n); the instance then
    spends one VIEW-CHANGE round and one NEW-VIEW round before PREPARE.

    Args:
        instance: PBFT instance whose primary was detected faulty
        round_index: Round in which the fault was detected

    Returns:
        The new view number

    Raises:
        UnrecoverableLedger: Fewer than 2f+1 honest nodes remain
    """
    honest = [node for node in instance.members
              if instance.plan.is_honest(node) and instance.plan.is_alive(node, round_index + 1)]
    if len(honest) < instance.quorum:
        raise UnrecoverableLedger(
            f"Ledger {instance.ledger} has {len(honest)} honest live node(s), needs {instance.quorum}"
        )
    old_primary = instance.primary
    instance.view += 1
    instance.view_changes += 1
    instance.phase = PbftPhase.VIEW_CHANGE
    logger.warning("Ledger %d: view change %d -> %d, primary %s -> %s",
                   instance.ledger, instance.view - 1, instance.view, old_primary, instance.primary)
    return instance.view


class PbftEngine(ProtocolEngine):
    """Standalone PBFT on one ledger of the consortium."""

    phase_tags = tuple(tag.value for tag in PbftTag)

    def __init__(self, cfg: ClusterConfig, ledger: int = 0, proposal: Optional[Vote] = None):
        super().__init__(cfg)
        if not 0 <= ledger < cfg.k:
            raise ValueError(f"Ledger {ledger} outside 0..{cfg.k - 1}")
        self.ledger = ledger
        self.proposal = proposal
        self.view = 0
        self.instance: Optional[PbftInstance] = None

    @property
    def name(self) -> str:
        return "pbft"

    def begin(self, txn: Transaction) -> None:
        self.txn = txn
        self.attempt = 0
        proposal = self.proposal if self.proposal is not None else txn.ledger_vote(self.ledger)
        self.instance = PbftInstance(
            ledger=self.ledger, n=self.cfg.n, f=self.cfg.f, k=self.cfg.k,
            txn_id=txn.id, proposal=proposal, plan=self.plan, view=self.view,
        )

    def emit(self, round_index: int) -> List[Envelope]:
        return self.instance.emit(round_index)

    def deliver(self, round_index: int, delivered: List[Envelope],
                equivocations: Set[EquivocationKey]) -> bool:
        progressed = self.instance.deliver(round_index, delivered, equivocations)
        self.view = self.instance.view
        self.view_changes = self.instance.view_changes
        return progressed

    @property
    def done(self) -> bool:
        return self.instance is not None and self.instance.done

    def participants(self) -> List[NodeId]:
        return ledger_members(self.ledger, self.cfg.n)

    def node_decisions(self) -> Dict[NodeId, Decision]:
        return self.instance.node_decisions()

    def outcome(self) -> Vote:
        return self.instance.decision.value

    def formula_rounds(self) -> int:
        return PBFT_ROUNDS


def run_pbft(ledger: int, proposal: Vote, cfg: ClusterConfig, txn_id: int = 0,
             liveness_slack: int = 3) -> Tuple[Decision, RunMetrics]:
    """
    Execute PBFT once on a ledger and return its decision with the run's accounting.

    Args:
        ledger: Ledger index
        proposal: Value the primary proposes
        cfg: Validated cluster configuration
        txn_id: Transaction id carried in the proposal
        liveness_slack: Extra rounds allowed beyond the failure-free four
    """
    engine = PbftEngine(cfg, ledger, proposal)
    simulator = create_simulator(cfg, liveness_slack=liveness_slack)
    other = (ledger + 1) % cfg.k
    txn = Transaction(txn_id, frozenset({ledger, other}), payload_tag="pbft")
    metrics = simulator.run(engine, [txn])
    return engine.instance.decision, metrics


def pbft_execute(ledger: int, proposal: Vote, cfg: ClusterConfig, txn_id: int = 0) -> Decision:
    """Run one PBFT execution on `ledger` and return the ledger's decision."""
    decision, _ = run_pbft(ledger, proposal, cfg, txn_id)
    return decision
