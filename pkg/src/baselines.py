"""
Baseline cross-ledger protocols.

Vldb20Engine treats every ledger as one 2PC participant and uses a witness
ledger as coordinator; every 2PC step that changes ledger state runs PBFT
on each ledger in parallel. A ledger whose primary missed the decision
replaces that primary and gets the decision sent again; each ledger then
orders the witness-signed copy it holds, never a value it did not receive.

Podc18Engine walks the ledgers on a ring: a forward pass locks every
ledger, a backward pass claims them. Each hop is a two-message swap between
adjacent primaries followed by one PBFT execution on the receiving ledger,
guarded by a per-hop timelock.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Set, Tuple

from .complexity import HOP_ROUNDS, rounds_formula
from .data_models import (
    ClusterConfig, Decision, Envelope, NodeId, PbftTag, PodcTag, Protocol, Proposal,
    Transaction, ViewChange, VldbTag, Vote, ledger_members, quorum_size, value_of,
)
from .errors import CoordinatorBlocked, TimelockExpired, UnrecoverableLedger
from .faults import EquivocationKey
from .pbft import PbftInstance
from .simulator import ProtocolEngine, Simulator, TxnFragment, create_simulator

logger = logging.getLogger(__name__)


def choose_witness(cfg: ClusterConfig) -> int:
    """Ledger acting as the 2PC coordinator: ledger 0 unless configured otherwise."""
    return cfg.witness


class _PrimaryTracker:
    """Per-ledger PBFT views that persist across transactions."""

    def __init__(self, cfg: ClusterConfig):
        self.n = cfg.n
        self.views: Dict[int, int] = {ledger: 0 for ledger in range(cfg.k)}

    def primary(self, ledger: int) -> NodeId:
        return NodeId(ledger, self.views[ledger] % self.n)

    def absorb(self, instance: PbftInstance) -> int:
        """Record the instance's final view; return its view-change count."""
        self.views[instance.ledger] = instance.view
        return instance.view_changes


# ----------------------------------------------------------------------------
# VLDB-20: 2PC over ledgers
# ----------------------------------------------------------------------------

class Vldb20Phase(Enum):
    VOTE = "VOTE"
    VOTE_PBFT = "VOTE_PBFT"
    VOTE_COLLECT = "VOTE_COLLECT"
    DECIDE = "DECIDE"
    DECIDE_PBFT = "DECIDE_PBFT"
    ACK = "ACK"
    DONE = "DONE"
    # replacing primaries that missed the decision
    VIEW_CHANGE = "VIEW_CHANGE"
    NEW_VIEW = "NEW_VIEW"


@dataclass
class Vldb20State:
    """Per-transaction coordinator state."""
    witness: int
    phase: Vldb20Phase = Vldb20Phase.VOTE
    requested: Dict[int, Vote] = field(default_factory=dict)
    ledger_votes: Dict[int, Vote] = field(default_factory=dict)
    decision: Optional[Decision] = None
    decide_envelopes: Dict[int, Envelope] = field(default_factory=dict)
    decide_resent: bool = False
    replaced: List[int] = field(default_factory=list)
    instances: Dict[int, PbftInstance] = field(default_factory=dict)

    def global_decision(self, k: int) -> Decision:
        """2PC unanimity over ledger votes; a missing vote counts as ROLLBACK."""
        committed = sum(1 for ledger in range(k) if self.ledger_votes.get(ledger) is Vote.COMMIT)
        if committed == k:
            return Decision(Vote.COMMIT, k)
        return Decision(Vote.ROLLBACK, k - committed)


class Vldb20Engine(ProtocolEngine):
    """2PC with a witness-ledger coordinator and PBFT inside every ledger."""

    protocol = Protocol.VLDB20
    phase_tags = (VldbTag.VOTE.value, VldbTag.DECIDE.value) + tuple(tag.value for tag in PbftTag)

    def __init__(self, cfg: ClusterConfig):
        super().__init__(cfg)
        self.witness = choose_witness(cfg)
        self.primaries = _PrimaryTracker(cfg)
        self.state = Vldb20State(witness=self.witness)

    def begin(self, txn: Transaction) -> None:
        self.txn = txn
        self.attempt = 0
        self.view_changes = 0
        self.state = Vldb20State(witness=self.witness)

    @property
    def done(self) -> bool:
        return self.state.phase is Vldb20Phase.DONE

    def formula_rounds(self) -> int:
        return rounds_formula(Protocol.VLDB20, self.cfg.k)

    def node_decisions(self) -> Dict[NodeId, Decision]:
        decisions: Dict[NodeId, Decision] = {}
        if self.state.phase in (Vldb20Phase.ACK, Vldb20Phase.DONE):
            for instance in self.state.instances.values():
                decisions.update(instance.node_decisions())
        return decisions

    def outcome(self) -> Vote:
        return self.state.decision.value

    def _coordinator(self, round_index: int, sending: bool) -> NodeId:
        coordinator = self.primaries.primary(self.witness)
        alive = self.can_send(coordinator, round_index) if sending else self.is_live(coordinator, round_index)
        if not alive:
            raise CoordinatorBlocked(
                f"witness primary {coordinator} is down at round {round_index}; 2PC cannot proceed"
            )
        return coordinator

    def _start_instances(self, proposals: Mapping[int, Vote],
                         carried: Optional[Mapping[int, Envelope]] = None) -> None:
        carried = carried or {}
        self.state.instances = {
            ledger: PbftInstance(
                ledger=ledger, n=self.cfg.n, f=self.cfg.f, k=self.cfg.k, txn_id=self.txn.id,
                proposal=proposal, plan=self.plan, view=self.primaries.views[ledger],
                carried=carried.get(ledger),
            )
            for ledger, proposal in sorted(proposals.items())
        }

    def _run_instances(self, round_index: int, delivered: List[Envelope],
                       equivocations: Set[EquivocationKey]) -> bool:
        """Advance every ledger's PBFT; True once all of them finished."""
        for ledger, instance in self.state.instances.items():
            if not instance.done:
                own = [envelope for envelope in delivered if envelope.src.ledger == ledger]
                instance.deliver(round_index, own, equivocations)
        if all(instance.done for instance in self.state.instances.values()):
            for instance in self.state.instances.values():
                self.view_changes += self.primaries.absorb(instance)
            return True
        return False

    def emit(self, round_index: int) -> List[Envelope]:
        state = self.state
        k = self.cfg.k
        if state.phase is Vldb20Phase.VOTE:
            coordinator = self._coordinator(round_index, sending=True)
            request = Proposal(self.txn.id, Vote.COMMIT)
            return [Envelope(round_index, coordinator, self.primaries.primary(ledger), VldbTag.VOTE.value, request)
                    for ledger in range(k)]

        if state.phase in (Vldb20Phase.VOTE_PBFT, Vldb20Phase.DECIDE_PBFT):
            envelopes: List[Envelope] = []
            for instance in state.instances.values():
                envelopes.extend(instance.emit(round_index))
            return envelopes

        if state.phase is Vldb20Phase.VOTE_COLLECT:
            coordinator = self.primaries.primary(self.witness)
            return [Envelope(round_index, self.primaries.primary(ledger), coordinator, VldbTag.VOTE.value,
                             state.instances[ledger].decision.value)
                    for ledger in range(k)]

        if state.phase is Vldb20Phase.DECIDE:
            coordinator = self._coordinator(round_index, sending=True)
            return [Envelope(round_index, coordinator, self.primaries.primary(ledger), VldbTag.DECIDE.value,
                             state.decision)
                    for ledger in range(k)]

        if state.phase is Vldb20Phase.ACK:
            coordinator = self.primaries.primary(self.witness)
            return [Envelope(round_index, self.primaries.primary(ledger), coordinator, VldbTag.DECIDE.value,
                             state.instances[ledger].decision)
                    for ledger in range(k)]

        if state.phase is Vldb20Phase.VIEW_CHANGE:
            envelopes = []
            for ledger in state.replaced:
                members = ledger_members(ledger, self.cfg.n)
                report = ViewChange(ledger, self.primaries.views[ledger])
                envelopes.extend(Envelope(round_index, member, other, PbftTag.VIEW_CHANGE.value, report)
                                 for member in members for other in members)
            return envelopes

        if state.phase is Vldb20Phase.NEW_VIEW:
            envelopes = []
            for ledger in state.replaced:
                primary = self.primaries.primary(ledger)
                announcement = ViewChange(ledger, self.primaries.views[ledger])
                envelopes.extend(Envelope(round_index, primary, node, PbftTag.NEW_VIEW.value, announcement)
                                 for node in self.cfg.nodes() if node != primary)
            return envelopes
        return []

    def deliver(self, round_index: int, delivered: List[Envelope],
                equivocations: Set[EquivocationKey]) -> bool:
        state = self.state
        k = self.cfg.k
        inbound = [envelope for envelope in delivered if self.is_live(envelope.dst, round_index)]

        if state.phase is Vldb20Phase.VOTE:
            for envelope in inbound:
                if envelope.dst == self.primaries.primary(envelope.dst.ledger):
                    state.requested[envelope.dst.ledger] = value_of(envelope.body)
            if not state.requested:
                raise CoordinatorBlocked(f"no ledger primary received the vote request in round {round_index}")
            proposals = {}
            for ledger in range(k):
                asked = state.requested.get(ledger) is Vote.COMMIT
                proposals[ledger] = self.txn.ledger_vote(ledger) if asked else Vote.ROLLBACK
            self._start_instances(proposals)
            state.phase = Vldb20Phase.VOTE_PBFT

        elif state.phase is Vldb20Phase.VOTE_PBFT:
            if self._run_instances(round_index, delivered, equivocations):
                state.phase = Vldb20Phase.VOTE_COLLECT

        elif state.phase is Vldb20Phase.VOTE_COLLECT:
            coordinator = self._coordinator(round_index, sending=False)
            for envelope in inbound:
                if envelope.dst == coordinator and envelope.phase == VldbTag.VOTE.value:
                    state.ledger_votes[envelope.src.ledger] = value_of(envelope.body)
            state.decision = state.global_decision(k)
            logger.debug("Transaction %d: witness ledger %d decides %s",
                         self.txn.id, self.witness, state.decision.value.name)
            state.phase = Vldb20Phase.DECIDE

        elif state.phase is Vldb20Phase.DECIDE:
            self._collect_decide(round_index, inbound, equivocations)

        elif state.phase is Vldb20Phase.DECIDE_PBFT:
            if self._run_instances(round_index, delivered, equivocations):
                state.phase = Vldb20Phase.ACK

        elif state.phase is Vldb20Phase.ACK:
            state.phase = Vldb20Phase.DONE

        elif state.phase is Vldb20Phase.VIEW_CHANGE:
            state.phase = Vldb20Phase.NEW_VIEW

        elif state.phase is Vldb20Phase.NEW_VIEW:
            coordinator = self._coordinator(round_index, sending=False)
            heard = {envelope.src.ledger for envelope in inbound
                     if envelope.dst == coordinator and envelope.phase == PbftTag.NEW_VIEW.value}
            silent = [ledger for ledger in state.replaced
                      if ledger not in heard and self.primaries.primary(ledger) != coordinator]
            if silent:
                self._replace_primaries(silent, round_index)
            else:
                state.replaced = []
                state.phase = Vldb20Phase.DECIDE
        return True

    def _collect_decide(self, round_index: int, inbound: List[Envelope],
                        equivocations: Set[EquivocationKey]) -> None:
        """
        Keep the first signed decision each ledger primary received.

        Raises:
            CoordinatorBlocked: The coordinator sent conflicting decisions, or
                some ledger missed the decision after it was sent again
        """
        state = self.state
        coordinator = self.primaries.primary(self.witness)
        if (coordinator, VldbTag.DECIDE.value, round_index) in equivocations:
            raise CoordinatorBlocked(f"witness primary {coordinator} equivocated on the decision")
        for envelope in inbound:
            ledger = envelope.dst.ledger
            if envelope.phase != VldbTag.DECIDE.value or envelope.dst != self.primaries.primary(ledger):
                continue
            held = state.decide_envelopes.get(ledger)
            if held is not None and value_of(held.body) is not value_of(envelope.body):
                raise CoordinatorBlocked(f"witness primary {coordinator} sent ledger {ledger} two decisions")
            state.decide_envelopes.setdefault(ledger, envelope)

        missed = [ledger for ledger in range(self.cfg.k) if ledger not in state.decide_envelopes]
        if not missed:
            self._start_instances({ledger: value_of(envelope.body)
                                   for ledger, envelope in state.decide_envelopes.items()},
                                  carried=state.decide_envelopes)
            state.phase = Vldb20Phase.DECIDE_PBFT
            return
        if state.decide_resent:
            raise CoordinatorBlocked(f"ledger(s) {missed} missed the decision twice")
        state.decide_resent = True
        self._replace_primaries(missed, round_index)

    def _replace_primaries(self, ledgers: List[int], round_index: int) -> None:
        """View-change `ledgers` ahead of a DECIDE resend."""
        quorum = quorum_size(self.cfg.f)
        for ledger in ledgers:
            honest = self.honest_live(ledger_members(ledger, self.cfg.n), round_index)
            if len(honest) < quorum:
                raise UnrecoverableLedger(f"Ledger {ledger} has {len(honest)} honest live node(s), needs {quorum}")
            old = self.primaries.primary(ledger)
            self.primaries.views[ledger] += 1
            self.view_changes += 1
            logger.warning("Transaction %d: ledger %d primary %s missed the decision, primary now %s",
                           self.txn.id, ledger, old, self.primaries.primary(ledger))
        self.state.replaced = sorted(ledgers)
        self.state.phase = Vldb20Phase.VIEW_CHANGE


# ----------------------------------------------------------------------------
# PODC-18: ring traversal with timelocks
# ----------------------------------------------------------------------------

class HopStage(Enum):
    STALL = "STALL"
    EXCHANGE = "EXCHANGE"
    WAITING = "WAITING"
    PBFT = "PBFT"


@dataclass
class Podc18State:
    """
    Ring traversal state for one transaction.

    Hops 0..k-1 walk the ring forward and lock each ledger; hops k..2k-1
    walk it backward and claim them.
    """
    ring: List[int]
    timelock_rounds: int
    hop: int = 0
    stage: HopStage = HopStage.EXCHANGE
    elapsed: int = 0
    outcome: Dict[int, Vote] = field(default_factory=dict)
    locked: Set[int] = field(default_factory=set)
    claimed: Set[int] = field(default_factory=set)
    instance: Optional[PbftInstance] = None
    finished: bool = False
    expired_hop: Optional[int] = None

    @property
    def hop_count(self) -> int:
        return 2 * len(self.ring)

    def is_forward(self, hop: int) -> bool:
        return hop < len(self.ring)

    def hop_pair(self, hop: int) -> Tuple[int, int]:
        """(sending ledger, receiving ledger) of a hop."""
        k = len(self.ring)
        if hop < k:
            return self.ring[hop], self.ring[(hop + 1) % k]
        back = hop - k
        return self.ring[(k - back) % k], self.ring[(k - back - 1) % k]


class Podc18Engine(ProtocolEngine):
    """
    Ring atomic-swap engine.

    `hop_stalls` maps a hop index to the idle rounds its sending party waits
    before sending. A hop expires when it is still incomplete after
    `timelock_rounds` rounds.
    """

    protocol = Protocol.PODC18
    phase_tags = (PodcTag.HOP_FWD.value, PodcTag.HOP_BWD.value) + tuple(tag.value for tag in PbftTag)
    enforces_atomicity = False

    def __init__(self, cfg: ClusterConfig, hop_stalls: Optional[Mapping[int, int]] = None):
        super().__init__(cfg)
        stalls = dict(hop_stalls or {})
        for hop, stall in stalls.items():
            if not 0 <= hop < 2 * cfg.k or stall < 0:
                raise ValueError(f"Invalid hop stall {hop}: {stall}")
        self.hop_stalls = stalls
        self.primaries = _PrimaryTracker(cfg)
        self.state = Podc18State(ring=list(range(cfg.k)), timelock_rounds=cfg.timelock_rounds)

    def begin(self, txn: Transaction) -> None:
        self.txn = txn
        self.attempt = 0
        self.view_changes = 0
        self.state = Podc18State(ring=list(range(self.cfg.k)), timelock_rounds=self.cfg.timelock_rounds)
        self._start_hop(0)

    @property
    def done(self) -> bool:
        return self.state.finished

    def formula_rounds(self) -> int:
        """Failure-free rounds plus the idle rounds the timeout schedule adds."""
        timelock = self.cfg.timelock_rounds
        stalled = sum(min(stall, timelock) for stall in self.hop_stalls.values())
        return rounds_formula(Protocol.PODC18, self.cfg.k) + stalled + max(0, timelock - HOP_ROUNDS)

    def node_decisions(self) -> Dict[NodeId, Decision]:
        decisions: Dict[NodeId, Decision] = {}
        for ledger, value in sorted(self.state.outcome.items()):
            members = ledger_members(ledger, self.cfg.n)
            decisions.update({member: Decision(value, len(members)) for member in members})
        return decisions

    def outcome(self) -> Vote:
        values = [self.state.outcome.get(ledger, Vote.ROLLBACK) for ledger in self.state.ring]
        return Vote.COMMIT if all(value is Vote.COMMIT for value in values) else Vote.ROLLBACK

    def _tag(self, hop: int) -> str:
        return PodcTag.HOP_FWD.value if self.state.is_forward(hop) else PodcTag.HOP_BWD.value

    def _start_hop(self, hop: int) -> None:
        state = self.state
        state.hop = hop
        state.elapsed = 0
        state.instance = None
        state.stage = HopStage.STALL if self.hop_stalls.get(hop, 0) > 0 else HopStage.EXCHANGE

    def emit(self, round_index: int) -> List[Envelope]:
        state = self.state
        if state.stage is HopStage.EXCHANGE:
            sender, receiver = state.hop_pair(state.hop)
            a, b = self.primaries.primary(sender), self.primaries.primary(receiver)
            offer = Proposal(self.txn.id, Vote.COMMIT)
            tag = self._tag(state.hop)
            return [Envelope(round_index, a, b, tag, offer), Envelope(round_index, b, a, tag, offer)]
        if state.stage is HopStage.PBFT:
            return state.instance.emit(round_index)
        return []

    def deliver(self, round_index: int, delivered: List[Envelope],
                equivocations: Set[EquivocationKey]) -> bool:
        state = self.state
        state.elapsed += 1
        completed = False

        if state.stage is HopStage.STALL:
            if state.elapsed >= self.hop_stalls.get(state.hop, 0):
                state.stage = HopStage.EXCHANGE

        elif state.stage is HopStage.EXCHANGE:
            sender, receiver = state.hop_pair(state.hop)
            a, b = self.primaries.primary(sender), self.primaries.primary(receiver)
            offers = [envelope for envelope in delivered
                      if envelope.src == a and envelope.dst == b and self.is_live(b, round_index)]
            if offers:
                accepted = value_of(offers[0].body) is Vote.COMMIT
                if state.is_forward(state.hop):
                    proposal = self.txn.ledger_vote(receiver) if accepted else Vote.ROLLBACK
                else:
                    proposal = Vote.COMMIT if accepted else Vote.ROLLBACK
                state.instance = PbftInstance(
                    ledger=receiver, n=self.cfg.n, f=self.cfg.f, k=self.cfg.k, txn_id=self.txn.id,
                    proposal=proposal, plan=self.plan, view=self.primaries.views[receiver],
                )
                state.stage = HopStage.PBFT
            else:
                logger.warning("Transaction %d: hop %d message from %s never reached %s",
                               self.txn.id, state.hop, a, b)
                state.stage = HopStage.WAITING

        elif state.stage is HopStage.PBFT:
            instance = state.instance
            instance.deliver(round_index,
                             [envelope for envelope in delivered if envelope.src.ledger == instance.ledger],
                             equivocations)
            if instance.done:
                self.view_changes += self.primaries.absorb(instance)
                completed = True
                self._complete_hop(instance)

        if not completed and not state.finished:
            try:
                self._check_timelock()
            except TimelockExpired as exc:
                self._expire(exc)
        return True

    def _check_timelock(self) -> None:
        state = self.state
        if state.elapsed >= state.timelock_rounds:
            raise TimelockExpired(state.hop, state.elapsed)

    def _complete_hop(self, instance: PbftInstance) -> None:
        state = self.state
        value = instance.decision.value
        if state.is_forward(state.hop):
            if value is Vote.ROLLBACK:
                logger.debug("Transaction %d: ledger %d refused the lock, unwinding", self.txn.id, instance.ledger)
                state.outcome = {ledger: Vote.ROLLBACK for ledger in state.ring}
                state.finished = True
                return
            state.locked.add(instance.ledger)
        else:
            state.outcome[instance.ledger] = value
            state.claimed.add(instance.ledger)

        if state.hop + 1 == state.hop_count:
            state.finished = True
        else:
            self._start_hop(state.hop + 1)

    def _expire(self, exc: TimelockExpired) -> None:
        """Unwind after a timelock expiry; claimed ledgers keep their claim."""
        state = self.state
        logger.warning("Transaction %d: %s", self.txn.id, exc)
        state.expired_hop = exc.hop
        if state.is_forward(exc.hop):
            state.outcome = {ledger: Vote.ROLLBACK for ledger in state.ring}
        else:
            state.outcome = {ledger: state.outcome.get(ledger, Vote.ROLLBACK) for ledger in state.ring}
        state.instance = None
        state.finished = True


def _execute(engine: ProtocolEngine, cfg: ClusterConfig, txn: Transaction,
             simulator: Optional[Simulator]) -> TxnFragment:
    simulator = simulator or create_simulator(cfg)
    return simulator.run_transaction(engine, txn)


def vldb20_execute(cfg: ClusterConfig, txn: Transaction,
                   simulator: Optional[Simulator] = None) -> TxnFragment:
    """Run one transaction under 2PC-over-ledgers and return its accounting."""
    return _execute(Vldb20Engine(cfg), cfg, txn, simulator)


def podc18_execute(cfg: ClusterConfig, txn: Transaction, simulator: Optional[Simulator] = None,
                   hop_stalls: Optional[Mapping[int, int]] = None) -> TxnFragment:
    """Run one transaction under the ring protocol and return its accounting."""
    return _execute(Podc18Engine(cfg, hop_stalls), cfg, txn, simulator)
