"""
Five-phase cross-ledger commit protocol.

One initiator (a ledger primary) drives every transaction through
VOTE-REQ, VOTE-PREP, READY, COMMIT-REQ and COMMIT using three primitives:
inter-ledger one-to-all, intra-ledger all-to-all and all-to-one
collection. Any node can message any node.

Intra-ledger phases run two all-to-all streams per ledger, each closed by
one self-record at the ledger primary: the attest stream carries the
node's own vote or status, the echo stream forwards the initiator's signed
envelope. A node finalizes a status only when both streams back it with
2f+1 copies.

COMMIT-REQ carries the signed READY envelopes behind the decision. A
COMMIT is valid only when they hold a COMMIT vote from every node other
than their collector; ROLLBACK is always valid.

Recovery:
- Initiator silent in its send round, or no honest receiver holding a
  valid request: that round is the re-election round.
- Initiator equivocation, partial omission or a partly invalid request:
  the next round is an EVIDENCE round, which is the re-election round.
- A successor elected during VOTE-REQ restarts the transaction when no
  honest node holds a valid request, and otherwise resumes at VOTE-PREP.
  A successor elected during COMMIT-REQ re-broadcasts the certified
  decision it holds, or ROLLBACK.
- Ledger primary silent in an intra-ledger phase: a consortium-wide
  view-change (VIEW-CHANGE, NEW-VIEW) precedes the next phase. A failed
  initiator is left to re-election.
"""

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from .complexity import rounds_formula
from .data_models import (
    Body, ClusterConfig, Decision, Echo, Envelope, Evidence, LedgerRecord, NodeId, PbftTag,
    Protocol, Proposal, Transaction, ViewChange, Vote, XlpnTag, ledger_members,
    quorum_size, value_of,
)
from .errors import InitiatorFailed, NoPrimaryAvailable, NoQuorum, Unconfirmed, UnrecoverableLedger
from .faults import EquivocationKey
from .simulator import ProtocolEngine

logger = logging.getLogger(__name__)


class Xlpn22Phase(Enum):
    VOTE_REQ = "VOTE_REQ"
    VOTE_PREP = "VOTE_PREP"
    READY = "READY"
    COMMIT_REQ = "COMMIT_REQ"
    COMMIT = "COMMIT"
    DONE = "DONE"
    # recovery steps
    EVIDENCE = "EVIDENCE"
    VIEW_CHANGE = "VIEW_CHANGE"
    NEW_VIEW = "NEW_VIEW"


@dataclass
class Xlpn22State:
    """
    Engine state. `initiator`, `views` and `failed_initiators` persist across
    transactions; everything else is reset when a transaction starts over.
    """
    initiator: NodeId
    views: Dict[int, int]
    n: int
    failed_initiators: Set[NodeId] = field(default_factory=set)
    phase: Xlpn22Phase = Xlpn22Phase.VOTE_REQ
    expected_voters: FrozenSet[NodeId] = frozenset()
    ready_votes: Dict[NodeId, Vote] = field(default_factory=dict)
    ready_certificate: Tuple[Envelope, ...] = ()
    local_tally: Dict[NodeId, Counter] = field(default_factory=dict)
    decision: Optional[Decision] = None
    proposals: Dict[NodeId, Envelope] = field(default_factory=dict)
    adopted: Dict[NodeId, Vote] = field(default_factory=dict)
    commit_requests: Dict[NodeId, Envelope] = field(default_factory=dict)
    finalized: Dict[NodeId, Decision] = field(default_factory=dict)
    evidence_from: Optional[NodeId] = None
    evidence_phase: str = ""
    evidence_reason: str = ""
    after_evidence: Xlpn22Phase = Xlpn22Phase.VOTE_PREP
    resume_after_evidence: Xlpn22Phase = Xlpn22Phase.VOTE_PREP
    pending_view_changes: List[int] = field(default_factory=list)
    resume: Xlpn22Phase = Xlpn22Phase.READY

    def primary(self, ledger: int) -> NodeId:
        return NodeId(ledger, self.views[ledger] % self.n)

    def start_attempt(self, nodes: Sequence[NodeId]) -> None:
        self.proposals = {}
        self.resume_collection(nodes)
        self.phase = Xlpn22Phase.VOTE_REQ

    def resume_collection(self, nodes: Sequence[NodeId]) -> None:
        """Reset everything after VOTE-REQ; requests already held are kept."""
        self.phase = Xlpn22Phase.VOTE_PREP
        self.expected_voters = frozenset(node for node in nodes if node != self.initiator)
        self.ready_votes = {}
        self.ready_certificate = ()
        self.local_tally = {}
        self.decision = None
        self.adopted = {}
        self.commit_requests = {}
        self.finalized = {}
        self.evidence_from = None
        self.evidence_phase = ""
        self.evidence_reason = ""
        self.pending_view_changes = []


def tally_quorum(counts: Counter, f: int) -> Vote:
    """The value attested by at least 2f+1 nodes."""
    backed = [value for value, count in counts.items() if count >= quorum_size(f)]
    if len(backed) != 1:
        raise NoQuorum(f"no single value reached {quorum_size(f)} attestations: {dict(counts)}")
    return backed[0]


def certificate_backs_commit(certificate: Sequence[Envelope], nodes: Sequence[NodeId]) -> bool:
    """
    Whether `certificate` holds a COMMIT READY vote from every node except
    the single collector all of its envelopes are addressed to.
    """
    collectors = {envelope.dst for envelope in certificate}
    if len(collectors) != 1:
        return False
    collector = next(iter(collectors))
    voters = {envelope.src for envelope in certificate}
    return (voters == {node for node in nodes if node != collector}
            and all(envelope.phase == XlpnTag.READY.value and value_of(envelope.body) is Vote.COMMIT
                    for envelope in certificate))


def valid_request(body: Body, txn_id: int) -> bool:
    """A VOTE-REQ asks to prepare this very transaction for COMMIT."""
    return isinstance(body, Proposal) and body.txn_id == txn_id and body.value is Vote.COMMIT


def valid_decision(body: Body, nodes: Sequence[NodeId]) -> bool:
    """A COMMIT-REQ either rolls back or carries a certificate backing the commit."""
    if not isinstance(body, Decision):
        return False
    return body.value is Vote.ROLLBACK or certificate_backs_commit(body.certificate, nodes)


def decide(state: Xlpn22State) -> Decision:
    """
    Unanimity rule at the initiator.

    COMMIT iff every expected READY vote arrived and all of them, and the
    initiator's own ledger agreement, are COMMIT. An absent vote is not
    agreement.
    """
    own = state.adopted.get(state.initiator, Vote.ROLLBACK)
    votes = state.ready_votes
    complete = state.expected_voters <= set(votes)
    if complete and own is Vote.COMMIT and all(votes[node] is Vote.COMMIT for node in state.expected_voters):
        return Decision(Vote.COMMIT, len(state.expected_voters) + 1, state.ready_certificate)
    rollback_backing = sum(1 for value in votes.values() if value is Vote.ROLLBACK)
    rollback_backing += 1 if own is Vote.ROLLBACK else 0
    return Decision(Vote.ROLLBACK, rollback_backing, state.ready_certificate)


def successor_decision(held: Optional[Envelope], nodes: Sequence[NodeId]) -> Decision:
    """
    What a re-elected initiator broadcasts in COMMIT-REQ: COMMIT when the
    request it holds carries a certificate backing it, ROLLBACK otherwise.
    """
    certificate: Tuple[Envelope, ...] = ()
    if held is not None and isinstance(held.body, Decision):
        certificate = held.body.certificate
    if certificate_backs_commit(certificate, nodes):
        return Decision(Vote.COMMIT, len(certificate), certificate)
    rollbacks = sum(1 for envelope in certificate if value_of(envelope.body) is Vote.ROLLBACK)
    return Decision(Vote.ROLLBACK, rollbacks, certificate)


def reelect_initiator(state: Xlpn22State, cfg: ClusterConfig) -> NodeId:
    """
    The next ledger's current primary, in ascending ledger order with
    wrap-around, skipping primaries that already failed as initiator.

    Raises:
        NoPrimaryAvailable: Every ledger's current primary has failed
    """
    current = state.initiator.ledger
    for offset in range(1, cfg.k + 1):
        candidate = state.primary((current + offset) % cfg.k)
        if candidate not in state.failed_initiators:
            return candidate
    raise NoPrimaryAvailable(f"all {cfg.k} primaries have failed as initiator")


def client_confirm(replies: Sequence[Decision], f: int) -> Vote:
    """
    Client-side confirmation: the status carried by at least f+1 identical replies.

    Raises:
        Unconfirmed: No status reaches f+1, or two statuses tie above it
    """
    counts = Counter(reply.value for reply in replies)
    reaching = {value: count for value, count in counts.items() if count >= f + 1}
    if not reaching:
        raise Unconfirmed(f"no status reached {f + 1} matching replies: {dict(counts)}")
    best = max(reaching.values())
    leaders = [value for value, count in reaching.items() if count == best]
    if len(leaders) > 1:
        raise Unconfirmed(f"conflicting statuses with {best} replies each")
    return leaders[0]


class Xlpn22Engine(ProtocolEngine):
    """Five-phase cross-ledger commit engine."""

    protocol = Protocol.XLPN22
    phase_tags = tuple(tag.value for tag in XlpnTag) + (PbftTag.VIEW_CHANGE.value, PbftTag.NEW_VIEW.value)

    def __init__(self, cfg: ClusterConfig):
        super().__init__(cfg)
        initiator = cfg.initiator if cfg.initiator is not None else NodeId(0, 0)
        self.state = Xlpn22State(initiator=initiator, views={ledger: 0 for ledger in range(cfg.k)}, n=cfg.n)
        self.nodes = cfg.nodes()
        self.quorum = quorum_size(cfg.f)

    def begin(self, txn: Transaction) -> None:
        self.txn = txn
        self.attempt = 0
        self.view_changes = 0
        self.state.start_attempt(self.nodes)
        logger.debug("Transaction %d: initiator %s", txn.id, self.state.initiator)

    @property
    def done(self) -> bool:
        return self.state.phase is Xlpn22Phase.DONE

    def formula_rounds(self) -> int:
        return rounds_formula(Protocol.XLPN22, self.cfg.k)

    def node_decisions(self) -> Dict[NodeId, Decision]:
        return dict(self.state.finalized)

    def outcome(self) -> Vote:
        return client_confirm(list(self.state.finalized.values()), self.cfg.f)

    # Communication primitives

    def _one_to_all(self, src: NodeId, round_index: int, tag: str, body) -> List[Envelope]:
        """Inter-ledger one-to-all: `src` sends to every other node of the consortium."""
        return [Envelope(round_index, src, node, tag, body) for node in self.nodes if node != src]

    def _intra_round(self, round_index: int, tag: str,
                     attest: Callable[[NodeId], Optional[object]],
                     echo: Callable[[NodeId], Optional[Echo]]) -> List[Envelope]:
        """Intra-ledger all-to-all on both streams, plus the primary's two self-records per ledger."""
        envelopes: List[Envelope] = []
        for ledger in range(self.cfg.k):
            members = ledger_members(ledger, self.cfg.n)
            for member in members:
                attested = attest(member)
                if attested is not None:
                    envelopes.extend(Envelope(round_index, member, other, tag, attested) for other in members)
                echoed = echo(member)
                if echoed is not None:
                    envelopes.extend(Envelope(round_index, member, other, tag, echoed) for other in members)
            primary = self.state.primary(ledger)
            attest_value = value_of(attest(primary)) if attest(primary) is not None else Vote.ROLLBACK
            echoed = echo(primary)
            echo_value = value_of(echoed) if echoed is not None else attest_value
            envelopes.append(Envelope(round_index, primary, primary, tag, LedgerRecord("attest", attest_value)))
            envelopes.append(Envelope(round_index, primary, primary, tag, LedgerRecord("echo", echo_value)))
        return envelopes

    # Phase emission

    def phase_vote_req(self, txn: Transaction, round_index: int) -> List[Envelope]:
        """Initiator broadcasts the request to all kn-1 other nodes."""
        initiator = self.state.initiator
        if not self.can_send(initiator, round_index):
            raise InitiatorFailed(f"initiator {initiator} is down at round {round_index}")
        proposal = Proposal(txn.id, Vote.COMMIT)
        self.state.proposals[initiator] = Envelope(round_index, initiator, initiator,
                                                   XlpnTag.VOTE_REQ.value, proposal)
        return self._one_to_all(initiator, round_index, XlpnTag.VOTE_REQ.value, proposal)

    def _local_vote(self, node: NodeId) -> Vote:
        request = self.state.proposals.get(node)
        if request is None or not valid_request(request.body, self.txn.id):
            return Vote.ROLLBACK
        return self.txn.ledger_vote(node.ledger)

    def _valid_commit_request(self, node: NodeId) -> Optional[Envelope]:
        request = self.state.commit_requests.get(node)
        if request is None or not valid_decision(request.body, self.nodes):
            return None
        return request

    def phase_vote_prep(self, round_index: int) -> List[Envelope]:
        """Every node shares its vote and forwards the request within its ledger."""
        def echo(node: NodeId) -> Optional[Echo]:
            request = self.state.proposals.get(node)
            return Echo(request) if request is not None else None
        return self._intra_round(round_index, XlpnTag.VOTE_PREP.value, self._local_vote, echo)

    def phase_ready(self, round_index: int) -> List[Envelope]:
        """Every non-initiator node reports its ledger-agreed vote to the initiator."""
        initiator = self.state.initiator
        return [Envelope(round_index, node, initiator, XlpnTag.READY.value,
                         self.state.adopted.get(node, Vote.ROLLBACK))
                for node in self.nodes if node != initiator]

    def phase_commit_req(self, round_index: int) -> List[Envelope]:
        """Initiator broadcasts its decision, with the READY certificate, to all kn-1 other nodes."""
        initiator = self.state.initiator
        if not self.can_send(initiator, round_index) or self.state.decision is None:
            raise InitiatorFailed(f"initiator {initiator} cannot broadcast a decision at round {round_index}")
        decision = self.state.decision
        self.state.commit_requests[initiator] = Envelope(round_index, initiator, initiator,
                                                         XlpnTag.COMMIT_REQ.value, decision)
        return self._one_to_all(initiator, round_index, XlpnTag.COMMIT_REQ.value, decision)

    def phase_commit(self, round_index: int) -> List[Envelope]:
        """Every node shares the decision it accepted and forwards the initiator's signed copy."""
        def attest(node: NodeId):
            request = self._valid_commit_request(node)
            return request.body if request is not None else None

        def echo(node: NodeId) -> Optional[Echo]:
            request = self._valid_commit_request(node)
            return Echo(request) if request is not None else None
        return self._intra_round(round_index, XlpnTag.COMMIT.value, attest, echo)

    def _evidence_broadcast(self, round_index: int) -> List[Envelope]:
        state = self.state
        evidence = Evidence(state.initiator, state.evidence_phase, state.evidence_reason)
        return self._one_to_all(state.evidence_from, round_index, XlpnTag.EVIDENCE.value, evidence)

    def _view_change_messages(self, round_index: int) -> List[Envelope]:
        envelopes = []
        for ledger in self.state.pending_view_changes:
            members = ledger_members(ledger, self.cfg.n)
            view = self.state.views[ledger]
            for member in members:
                report = ViewChange(ledger, view, self.state.adopted.get(member))
                envelopes.extend(Envelope(round_index, member, other, PbftTag.VIEW_CHANGE.value, report)
                                 for other in members)
        return envelopes

    def _new_view_messages(self, round_index: int) -> List[Envelope]:
        envelopes = []
        for ledger in self.state.pending_view_changes:
            primary = self.state.primary(ledger)
            announcement = ViewChange(ledger, self.state.views[ledger])
            envelopes.extend(self._one_to_all(primary, round_index, PbftTag.NEW_VIEW.value, announcement))
        return envelopes

    def emit(self, round_index: int) -> List[Envelope]:
        phase = self.state.phase
        try:
            if phase is Xlpn22Phase.VOTE_REQ:
                return self.phase_vote_req(self.txn, round_index)
            if phase is Xlpn22Phase.COMMIT_REQ:
                return self.phase_commit_req(round_index)
        except InitiatorFailed as exc:
            logger.warning("Transaction %d: %s", self.txn.id, exc)
            return []
        if phase is Xlpn22Phase.VOTE_PREP:
            return self.phase_vote_prep(round_index)
        if phase is Xlpn22Phase.READY:
            return self.phase_ready(round_index)
        if phase is Xlpn22Phase.COMMIT:
            return self.phase_commit(round_index)
        if phase is Xlpn22Phase.EVIDENCE:
            return self._evidence_broadcast(round_index)
        if phase is Xlpn22Phase.VIEW_CHANGE:
            return self._view_change_messages(round_index)
        if phase is Xlpn22Phase.NEW_VIEW:
            return self._new_view_messages(round_index)
        return []

    # Delivery

    def deliver(self, round_index: int, delivered: List[Envelope],
                equivocations: Set[EquivocationKey]) -> bool:
        phase = self.state.phase
        inbound = [envelope for envelope in delivered if self.is_live(envelope.dst, round_index)]

        if phase is Xlpn22Phase.VOTE_REQ:
            for envelope in inbound:
                if envelope.phase == XlpnTag.VOTE_REQ.value:
                    self.state.proposals[envelope.dst] = envelope
            self._after_initiator_broadcast(
                round_index, XlpnTag.VOTE_REQ.value, self.state.proposals,
                lambda body: valid_request(body, self.txn.id), equivocations,
                next_phase=Xlpn22Phase.VOTE_PREP, restart=Xlpn22Phase.VOTE_REQ, resume=Xlpn22Phase.VOTE_PREP)
        elif phase is Xlpn22Phase.VOTE_PREP:
            self._collect_vote_prep(round_index, inbound)
            self._check_primaries(round_index, inbound, XlpnTag.VOTE_PREP.value, Xlpn22Phase.READY)
        elif phase is Xlpn22Phase.READY:
            self._collect_ready(round_index, inbound)
            self.state.phase = Xlpn22Phase.COMMIT_REQ
        elif phase is Xlpn22Phase.COMMIT_REQ:
            for envelope in inbound:
                if envelope.phase == XlpnTag.COMMIT_REQ.value:
                    self.state.commit_requests[envelope.dst] = envelope
            self._after_initiator_broadcast(
                round_index, XlpnTag.COMMIT_REQ.value, self.state.commit_requests,
                lambda body: valid_decision(body, self.nodes), equivocations,
                next_phase=Xlpn22Phase.COMMIT, restart=Xlpn22Phase.COMMIT_REQ, resume=Xlpn22Phase.COMMIT_REQ)
        elif phase is Xlpn22Phase.COMMIT:
            self._collect_commit(round_index, inbound)
            if self._all_finalized(round_index):
                self.state.phase = Xlpn22Phase.DONE
            else:
                self._check_primaries(round_index, inbound, XlpnTag.COMMIT.value, Xlpn22Phase.DONE)
        elif phase is Xlpn22Phase.EVIDENCE:
            heard = any(isinstance(envelope.body, Evidence) for envelope in inbound)
            if heard:
                self._initiator_failed(round_index, self.state.evidence_reason,
                                       self.state.resume_after_evidence)
            else:
                self.state.phase = self.state.after_evidence
        elif phase is Xlpn22Phase.VIEW_CHANGE:
            self.state.phase = Xlpn22Phase.NEW_VIEW
        elif phase is Xlpn22Phase.NEW_VIEW:
            silent = self._silent_primaries(round_index, inbound, PbftTag.NEW_VIEW.value,
                                            self.state.pending_view_changes)
            if silent:
                self._begin_view_change(silent, round_index, self.state.resume)
            else:
                self.state.pending_view_changes = []
                self.state.phase = self.state.resume
        return True

    def _after_initiator_broadcast(self, round_index: int, tag: str, received: Dict[NodeId, Envelope],
                                   is_valid: Callable[[Body], bool], equivocations: Set[EquivocationKey],
                                   next_phase: Xlpn22Phase, restart: Xlpn22Phase,
                                   resume: Xlpn22Phase) -> None:
        """
        Judge the initiator's broadcast from what the honest live receivers hold.

        Nobody holding a valid copy deposes the initiator at once and hands
        over at `restart`. A broadcast some honest receiver holds validly but
        another missed, holds invalidly or got a conflicting copy of leads to
        an EVIDENCE round that hands over at `resume`.
        """
        state = self.state
        receivers = self.honest_live([node for node in self.nodes if node != state.initiator], round_index)
        got = [node for node in receivers if node in received]
        valid = [node for node in got if is_valid(received[node].body)]
        if receivers and not valid:
            self._initiator_failed(round_index, f"{'invalid' if got else 'silent'} in {tag}", restart)
            return

        invalid = [node for node in got if node not in valid]
        missing = [node for node in receivers if node not in received]
        if (state.initiator, tag, round_index) in equivocations:
            state.evidence_from, state.evidence_reason = (invalid or got)[0], "equivocation"
        elif invalid:
            state.evidence_from, state.evidence_reason = invalid[0], "invalid request"
        elif missing:
            state.evidence_from, state.evidence_reason = missing[0], "omission"
        else:
            state.phase = next_phase
            return
        state.evidence_phase = tag
        state.after_evidence = next_phase
        state.resume_after_evidence = resume
        state.phase = Xlpn22Phase.EVIDENCE
        logger.warning("Transaction %d: %s holds evidence of %s by initiator %s in %s",
                       self.txn.id, state.evidence_from, state.evidence_reason, state.initiator, tag)

    def _collect_vote_prep(self, round_index: int, inbound: List[Envelope]) -> None:
        tallies: Dict[NodeId, Counter] = defaultdict(Counter)
        for envelope in inbound:
            if (envelope.phase == XlpnTag.VOTE_PREP.value and isinstance(envelope.body, Vote)
                    and envelope.src.ledger == envelope.dst.ledger):
                tallies[envelope.dst][envelope.body] += 1
        self.state.local_tally = dict(tallies)
        for node in self.nodes:
            if not self.is_live(node, round_index):
                continue
            try:
                self.state.adopted[node] = tally_quorum(tallies.get(node, Counter()), self.cfg.f)
            except NoQuorum as exc:
                logger.warning("Transaction %d: %s adopts ROLLBACK: %s", self.txn.id, node, exc)
                self.state.adopted[node] = Vote.ROLLBACK

    def _collect_ready(self, round_index: int, inbound: List[Envelope]) -> None:
        state = self.state
        if not self.is_live(state.initiator, round_index):
            state.decision = None
            return
        certificate = {}
        for envelope in inbound:
            if envelope.phase == XlpnTag.READY.value and envelope.dst == state.initiator:
                state.ready_votes[envelope.src] = value_of(envelope.body)
                certificate[envelope.src] = envelope
        state.ready_certificate = tuple(certificate[src] for src in sorted(certificate))
        state.decision = decide(state)
        logger.debug("Transaction %d: initiator %s decides %s with %d/%d votes",
                     self.txn.id, state.initiator, state.decision.value.name,
                     len(state.ready_votes), len(state.expected_voters))

    def _collect_commit(self, round_index: int, inbound: List[Envelope]) -> None:
        state = self.state
        attests: Dict[NodeId, Counter] = defaultdict(Counter)
        echoes: Dict[NodeId, Counter] = defaultdict(Counter)
        for envelope in inbound:
            if envelope.phase != XlpnTag.COMMIT.value or envelope.src.ledger != envelope.dst.ledger:
                continue
            body = envelope.body
            if isinstance(body, Decision):
                attests[envelope.dst][body.value] += 1
            elif (isinstance(body, Echo) and body.original.src == state.initiator
                  and body.original.phase == XlpnTag.COMMIT_REQ.value
                  and valid_decision(body.original.body, self.nodes)):
                echoes[envelope.dst][value_of(body)] += 1

        for node in self.nodes:
            if not self.is_live(node, round_index):
                continue
            for value in (Vote.COMMIT, Vote.ROLLBACK):
                if attests[node][value] >= self.quorum and echoes[node][value] >= self.quorum:
                    state.finalized[node] = Decision(value, attests[node][value])
                    break

    def _all_finalized(self, round_index: int) -> bool:
        return all(node in self.state.finalized for node in self.honest_live(self.nodes, round_index))

    def _silent_primaries(self, round_index: int, inbound: List[Envelope], tag: str,
                          ledgers: Sequence[int]) -> List[int]:
        heard: Dict[NodeId, Set[NodeId]] = defaultdict(set)
        for envelope in inbound:
            if envelope.phase == tag:
                heard[envelope.dst].add(envelope.src)
        silent = []
        for ledger in ledgers:
            primary = self.state.primary(ledger)
            peers = self.honest_live([node for node in ledger_members(ledger, self.cfg.n) if node != primary],
                                     round_index)
            if peers and all(primary not in heard[peer] for peer in peers):
                silent.append(ledger)
        return silent

    def _check_primaries(self, round_index: int, inbound: List[Envelope], tag: str,
                         next_phase: Xlpn22Phase) -> None:
        ledgers = [ledger for ledger in range(self.cfg.k) if self.state.primary(ledger) != self.state.initiator]
        silent = self._silent_primaries(round_index, inbound, tag, ledgers)
        if silent:
            self._begin_view_change(silent, round_index, next_phase)
        else:
            self.state.phase = next_phase

    # Recovery

    def _begin_view_change(self, ledgers: Sequence[int], round_index: int, resume: Xlpn22Phase) -> None:
        state = self.state
        for ledger in ledgers:
            honest = self.honest_live(ledger_members(ledger, self.cfg.n), round_index)
            if len(honest) < self.quorum:
                raise UnrecoverableLedger(
                    f"Ledger {ledger} has {len(honest)} honest live node(s), needs {self.quorum}"
                )
            old = state.primary(ledger)
            state.views[ledger] += 1
            self.view_changes += 1
            logger.warning("Transaction %d: ledger %d primary %s silent, view %d -> %d (primary %s)",
                           self.txn.id, ledger, old, state.views[ledger] - 1, state.views[ledger],
                           state.primary(ledger))
        state.pending_view_changes = sorted(ledgers)
        state.resume = resume
        state.phase = Xlpn22Phase.VIEW_CHANGE

    def _initiator_failed(self, round_index: int, reason: str, resume: Xlpn22Phase) -> None:
        """Depose the initiator and hand the transaction to its successor at `resume`."""
        state = self.state
        failed = state.initiator
        state.failed_initiators.add(failed)
        if state.primary(failed.ledger) == failed:
            state.views[failed.ledger] += 1
            self.view_changes += 1
        successor = reelect_initiator(state, self.cfg)
        logger.warning("Transaction %d: initiator %s failed (%s) in round %d, re-elected %s at %s",
                       self.txn.id, failed, reason, round_index, successor, resume.value)
        held = state.commit_requests.get(successor)
        state.initiator = successor
        self.attempt += 1
        if resume is Xlpn22Phase.VOTE_REQ:
            state.start_attempt(self.nodes)
        else:
            state.resume_collection(self.nodes)
            if resume is Xlpn22Phase.COMMIT_REQ:
                state.decision = successor_decision(held, self.nodes)
                state.phase = Xlpn22Phase.COMMIT_REQ


def create_xlpn22_engine(cfg: ClusterConfig) -> Xlpn22Engine:
    """Factory function to create the five-phase engine."""
    return Xlpn22Engine(cfg)
