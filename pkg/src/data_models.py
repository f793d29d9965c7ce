"""
Data models for the cross-ledger commit simulator.

This module defines the value types shared by every protocol engine: node
identities, votes and decisions, attributed message envelopes, transactions,
fault plans and the cluster configuration, plus the quorum arithmetic.
All types are immutable and safe to share between simulator instances.
"""

import string
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Dict, FrozenSet, List, Optional, Tuple, Union


class Protocol(Enum):
    """Cross-ledger commit protocols the simulator can run."""
    XLPN22 = "xlpn22"
    VLDB20 = "vldb20"
    PODC18 = "podc18"

    @property
    def label(self) -> str:
        """Human-readable protocol name used in reports."""
        return {
            Protocol.XLPN22: "XLPN-22",
            Protocol.VLDB20: "VLDB-20",
            Protocol.PODC18: "PODC-18",
        }[self]

    @classmethod
    def parse(cls, value: Union[str, "Protocol"]) -> "Protocol":
        """Accept 'xlpn22', 'XLPN22' or 'XLPN-22'."""
        if isinstance(value, Protocol):
            return value
        key = value.strip().lower().replace("-", "").replace("_", "")
        for protocol in cls:
            if protocol.value == key:
                return protocol
        raise ValueError(f"Unknown protocol: {value}")


class Vote(IntEnum):
    """Binary transaction status. COMMIT orders above ROLLBACK."""
    ROLLBACK = 0
    COMMIT = 1

    def inverted(self) -> "Vote":
        return Vote.ROLLBACK if self is Vote.COMMIT else Vote.COMMIT


# Phase tags as they appear in traces, metrics and CSV.

class XlpnTag(Enum):
    VOTE_REQ = "VOTE-REQ"
    VOTE_PREP = "VOTE-PREP"
    READY = "READY"
    COMMIT_REQ = "COMMIT-REQ"
    COMMIT = "COMMIT"
    EVIDENCE = "EVIDENCE"


class PbftTag(Enum):
    PRE_PREPARE = "PRE-PREPARE"
    PREPARE = "PREPARE"
    COMMIT = "COMMIT"
    REPLY = "REPLY"
    VIEW_CHANGE = "VIEW-CHANGE"
    NEW_VIEW = "NEW-VIEW"


class VldbTag(Enum):
    VOTE = "2PC-VOTE"
    DECIDE = "2PC-DECIDE"


class PodcTag(Enum):
    HOP_FWD = "HOP-FWD"
    HOP_BWD = "HOP-BWD"


@dataclass(frozen=True, order=True)
class NodeId:
    """A server of the consortium: ledger index and rank within the ledger."""
    ledger: int
    rank: int

    def __post_init__(self):
        if self.ledger < 0 or self.rank < 0:
            raise ValueError(f"Invalid node id: ledger={self.ledger}, rank={self.rank}")

    @property
    def is_primary_rank(self) -> bool:
        """Rank 0 is the primary in view 0."""
        return self.rank == 0

    @property
    def label(self) -> str:
        if self.ledger < 26:
            return f"{string.ascii_uppercase[self.ledger]}{self.rank}"
        return f"L{self.ledger}.{self.rank}"

    def __str__(self) -> str:
        return self.label


def parse_node(label: str) -> NodeId:
    """Parse 'A0', 'C3' or 'L27.4' into a NodeId."""
    text = label.strip()
    if text.startswith("L") and "." in text:
        ledger, rank = text[1:].split(".", 1)
        return NodeId(int(ledger), int(rank))
    if len(text) >= 2 and text[0] in string.ascii_uppercase and text[1:].isdigit():
        return NodeId(string.ascii_uppercase.index(text[0]), int(text[1:]))
    raise ValueError(f"Invalid node label: {label}")


def ledger_members(ledger: int, n: int) -> List[NodeId]:
    return [NodeId(ledger, rank) for rank in range(n)]


def all_nodes(k: int, n: int) -> List[NodeId]:
    """The k*n node universe in ascending order."""
    return [NodeId(ledger, rank) for ledger in range(k) for rank in range(n)]


@dataclass(frozen=True)
class Decision:
    """
    A status together with the number of matching attestations behind it.

    `certificate` holds the signed READY envelopes an initiator collected;
    receivers check a COMMIT against them. Inverting a decision leaves the
    certificate untouched.
    """
    value: Vote
    backing: int
    certificate: Tuple["Envelope", ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.backing < 0:
            raise ValueError(f"Decision backing cannot be negative: {self.backing}")
        object.__setattr__(self, "certificate", tuple(self.certificate))

    def inverted(self) -> "Decision":
        return Decision(self.value.inverted(), self.backing, self.certificate)


@dataclass(frozen=True)
class Proposal:
    """A request to run transaction `txn_id` towards `value`."""
    txn_id: int
    value: Vote

    def inverted(self) -> "Proposal":
        return Proposal(self.txn_id, self.value.inverted())


@dataclass(frozen=True)
class ViewChange:
    """VIEW-CHANGE report or NEW-VIEW announcement for one ledger."""
    ledger: int
    new_view: int
    prepared: Optional[Vote] = None


@dataclass(frozen=True)
class Evidence:
    """Proof of initiator misbehaviour broadcast before a re-election."""
    accused: NodeId
    phase: str
    reason: str


@dataclass(frozen=True)
class LedgerRecord:
    """Tally confirmation the ledger primary writes to itself."""
    stream: str
    value: Vote


@dataclass(frozen=True)
class Echo:
    """A forwarded copy of another node's signed envelope."""
    original: "Envelope"


Body = Union[Vote, Decision, Proposal, ViewChange, Evidence, LedgerRecord, Echo]


@dataclass(frozen=True)
class Envelope:
    """
    One attributed protocol message.

    `attribution` models the sender's signature: it always names `src`, so a
    faulty node cannot emit an envelope attributed to another node.
    """
    round: int
    src: NodeId
    dst: NodeId
    phase: str
    body: Body
    attribution: Optional[NodeId] = None

    def __post_init__(self):
        if self.attribution is None:
            object.__setattr__(self, "attribution", self.src)
        elif self.attribution != self.src:
            raise ValueError(
                f"Envelope from {self.src} cannot carry attribution of {self.attribution}"
            )
        if self.round < 0:
            raise ValueError(f"Invalid round: {self.round}")

    def trace_line(self) -> str:
        return f"{self.round}\t{self.src}\t{self.dst}\t{self.phase}\t{format_body(self.body)}"


def body_kind(body: Body) -> str:
    """Message kind used to decide which bodies are conflicting statements."""
    if isinstance(body, LedgerRecord):
        return f"record:{body.stream}"
    return type(body).__name__


def value_of(body: Body) -> Optional[Vote]:
    """The Vote a body speaks for, looking through forwarded copies."""
    if isinstance(body, Vote):
        return body
    if isinstance(body, (Decision, Proposal, LedgerRecord)):
        return body.value
    if isinstance(body, ViewChange):
        return body.prepared
    if isinstance(body, Echo):
        return value_of(body.original.body)
    return None


def invert_body(body: Body) -> Body:
    """Flip a vote-carrying body. Signed copies and view/evidence bodies are never altered."""
    if isinstance(body, Vote):
        return body.inverted()
    if isinstance(body, (Decision, Proposal)):
        return body.inverted()
    return body


def format_body(body: Body) -> str:
    if isinstance(body, Vote):
        return body.name
    if isinstance(body, Decision):
        return f"{body.value.name}/{body.backing}"
    if isinstance(body, Proposal):
        return f"txn={body.txn_id}:{body.value.name}"
    if isinstance(body, ViewChange):
        prepared = body.prepared.name if body.prepared is not None else "-"
        return f"view={body.new_view}:ledger={body.ledger}:{prepared}"
    if isinstance(body, Evidence):
        return f"evidence:{body.accused}:{body.phase}:{body.reason}"
    if isinstance(body, LedgerRecord):
        return f"record:{body.stream}:{body.value.name}"
    if isinstance(body, Echo):
        inner = body.original
        return f"echo({inner.src}>{inner.dst}:{inner.phase}:{format_body(inner.body)})"
    return repr(body)


@dataclass(frozen=True)
class Transaction:
    """A cross-ledger transaction. `vetoes` lists ledgers whose honest nodes vote ROLLBACK."""
    id: int
    touched_ledgers: FrozenSet[int]
    payload_tag: str = ""
    vetoes: FrozenSet[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "touched_ledgers", frozenset(self.touched_ledgers))
        object.__setattr__(self, "vetoes", frozenset(self.vetoes))
        if self.id < 0:
            raise ValueError(f"Transaction id must be non-negative: {self.id}")
        if len(self.touched_ledgers) < 2:
            raise ValueError(
                f"Transaction {self.id} touches {len(self.touched_ledgers)} ledger(s); at least 2 required"
            )
        if any(ledger < 0 for ledger in self.touched_ledgers):
            raise ValueError(f"Transaction {self.id} has a negative ledger index")
        if not self.vetoes <= self.touched_ledgers:
            raise ValueError(f"Transaction {self.id} vetoes ledgers it does not touch")

    def ledger_vote(self, ledger: int) -> Vote:
        return Vote.ROLLBACK if ledger in self.vetoes else Vote.COMMIT

    @property
    def expected_outcome(self) -> Vote:
        return Vote.ROLLBACK if self.vetoes else Vote.COMMIT


class StrategyKind(Enum):
    SILENT = "SILENT"
    WRONG_VOTE = "WRONG_VOTE"
    EQUIVOCATE = "EQUIVOCATE"
    OMIT = "OMIT"


@dataclass(frozen=True)
class ByzantineStrategy:
    """How a faulty node perturbs its outgoing envelopes."""
    kind: StrategyKind
    targets: FrozenSet[NodeId] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "targets", frozenset(self.targets))
        if self.kind is StrategyKind.OMIT and not self.targets:
            raise ValueError("OMIT strategy needs a non-empty target set")
        if self.kind is not StrategyKind.OMIT and self.targets:
            raise ValueError(f"{self.kind.value} strategy takes no targets")

    @classmethod
    def silent(cls) -> "ByzantineStrategy":
        return cls(StrategyKind.SILENT)

    @classmethod
    def wrong_vote(cls) -> "ByzantineStrategy":
        return cls(StrategyKind.WRONG_VOTE)

    @classmethod
    def equivocate(cls) -> "ByzantineStrategy":
        return cls(StrategyKind.EQUIVOCATE)

    @classmethod
    def omit(cls, targets) -> "ByzantineStrategy":
        return cls(StrategyKind.OMIT, frozenset(targets))

    def describe(self) -> str:
        if self.kind is StrategyKind.OMIT:
            return f"OMIT({','.join(str(t) for t in sorted(self.targets))})"
        return self.kind.value


@dataclass(frozen=True)
class FaultPlan:
    """
    Which nodes misbehave and how.

    Attributes:
        byzantine: Faulty nodes and their message strategy
        crash_at: Nodes that stop sending and receiving from the given round on
        initiator_fails_at: Round at which the initial XLPN-22 initiator crashes
    """
    byzantine: Dict[NodeId, ByzantineStrategy] = field(default_factory=dict)
    crash_at: Dict[NodeId, int] = field(default_factory=dict)
    initiator_fails_at: Optional[int] = None

    def __post_init__(self):
        for node, round_index in self.crash_at.items():
            if round_index < 0:
                raise ValueError(f"Crash round for {node} must be non-negative: {round_index}")
        if self.initiator_fails_at is not None and self.initiator_fails_at < 0:
            raise ValueError(f"initiator_fails_at must be non-negative: {self.initiator_fails_at}")

    def __hash__(self):
        return hash((
            tuple(sorted(self.byzantine.items())),
            tuple(sorted(self.crash_at.items())),
            self.initiator_fails_at,
        ))

    @property
    def is_empty(self) -> bool:
        return not self.byzantine and not self.crash_at and self.initiator_fails_at is None

    @property
    def faulty_nodes(self) -> FrozenSet[NodeId]:
        return frozenset(self.byzantine) | frozenset(self.crash_at)

    def faulty_in_ledger(self, ledger: int) -> int:
        return sum(1 for node in self.faulty_nodes if node.ledger == ledger)

    def within_budget(self, f: int) -> bool:
        """Per ledger, at most f nodes are Byzantine or crashed."""
        ledgers = {node.ledger for node in self.faulty_nodes}
        return all(self.faulty_in_ledger(ledger) <= f for ledger in ledgers)

    def is_crashed(self, node: NodeId, round_index: int) -> bool:
        crash = self.crash_at.get(node)
        return crash is not None and crash <= round_index

    def is_alive(self, node: NodeId, round_index: int) -> bool:
        return not self.is_crashed(node, round_index)

    def is_honest(self, node: NodeId) -> bool:
        """Honest nodes follow the protocol; crashed nodes are honest until they stop."""
        return node not in self.byzantine

    def strategy(self, node: NodeId) -> Optional[ByzantineStrategy]:
        return self.byzantine.get(node)

    def resolved(self, initiator: NodeId) -> "FaultPlan":
        """Turn `initiator_fails_at` into a crash of the given initiator."""
        if self.initiator_fails_at is None:
            return self
        crash_at = dict(self.crash_at)
        existing = crash_at.get(initiator)
        crash_at[initiator] = (
            self.initiator_fails_at if existing is None else min(existing, self.initiator_fails_at)
        )
        return FaultPlan(byzantine=dict(self.byzantine), crash_at=crash_at)

    def describe(self) -> str:
        parts = [f"{node}:{strategy.describe()}" for node, strategy in sorted(self.byzantine.items())]
        parts += [f"{node}:crash@{r}" for node, r in sorted(self.crash_at.items())]
        if self.initiator_fails_at is not None:
            parts.append(f"initiator:crash@{self.initiator_fails_at}")
        return ";".join(parts) if parts else "none"


@dataclass(frozen=True)
class ClusterConfig:
    """
    Consortium shape and run parameters.

    Attributes:
        k: Number of ledgers
        n: Nodes per ledger
        f: Tolerated Byzantine nodes per ledger
        seed: Deterministic RNG seed
        fault_plan: Fault injection plan
        initiator: Initial XLPN-22 initiator (default: ledger 0's primary)
        witness: Ledger acting as the VLDB-20 coordinator
        timelock_rounds: PODC-18 per-hop timeout budget
        round_latency: Simulated time units per synchronous round
        message_latency: Simulated time units per message
    """
    k: int
    n: int
    f: int
    seed: int = 0
    fault_plan: FaultPlan = field(default_factory=FaultPlan)
    initiator: Optional[NodeId] = None
    witness: int = 0
    timelock_rounds: int = 8
    round_latency: int = 1
    message_latency: int = 0

    @property
    def node_count(self) -> int:
        return self.k * self.n

    @property
    def quorum(self) -> int:
        return quorum_size(self.f)

    def nodes(self) -> List[NodeId]:
        return all_nodes(self.k, self.n)

    def contains(self, node: NodeId) -> bool:
        return node.ledger < self.k and node.rank < self.n


def quorum_size(f: int) -> int:
    """Attestations needed for a node-level decision."""
    if f < 0:
        raise ValueError(f"Fault budget must be non-negative: {f}")
    return 2 * f + 1


def max_faulty(n: int) -> int:
    """Largest f with n >= 3f + 1."""
    if n < 1:
        raise ValueError(f"Ledger size must be positive: {n}")
    return (n - 1) // 3


def detect_equivocation(a: Envelope, b: Envelope) -> bool:
    """
    Two envelopes from the same sender, round and phase whose bodies disagree.

    Bodies of different kinds (an own vote next to a forwarded copy) are
    separate statements and never conflict.
    """
    return (
        a.src == b.src
        and a.phase == b.phase
        and a.round == b.round
        and body_kind(a.body) == body_kind(b.body)
        and a.body != b.body
    )
