"""
Fault injection for the synchronous network.

`apply_faults` is the filter every round's outbox passes through before
delivery. It is a pure function of (outbox, plan, round). The equivocation
audit models receivers cross-checking signed envelopes, and the catalog
helpers enumerate the fault plans used by the exhaustive safety sweeps.
"""

import itertools
import logging
from collections import defaultdict
from typing import Dict, Iterator, List, Optional, Sequence, Set, Tuple

from .data_models import (
    ByzantineStrategy, Envelope, FaultPlan, NodeId, StrategyKind,
    all_nodes, body_kind, detect_equivocation, invert_body,
)

logger = logging.getLogger(__name__)

EquivocationKey = Tuple[NodeId, str, int]


def apply_faults(outbox: Sequence[Envelope], plan: FaultPlan,
                 round_index: int) -> Tuple[List[Envelope], List[Envelope]]:
    """
    Filter one round's outbox through the fault plan.

    Args:
        outbox: Envelopes emitted this round, in emission order
        plan: Fault plan in force
        round_index: Current round

    Returns:
        (delivered, dropped). Every input envelope lands in exactly one list;
        delivered envelopes may carry perturbed bodies.
    """
    if plan.is_empty:
        return list(outbox), []

    equivocation_flips = _equivocation_flips(outbox, plan)
    delivered: List[Envelope] = []
    dropped: List[Envelope] = []

    for index, envelope in enumerate(outbox):
        sender = envelope.src
        if plan.is_crashed(sender, round_index):
            dropped.append(envelope)
            continue
        strategy = plan.strategy(sender)
        if strategy is None:
            delivered.append(envelope)
            continue

        if strategy.kind is StrategyKind.SILENT:
            dropped.append(envelope)
        elif strategy.kind is StrategyKind.OMIT:
            if envelope.dst in strategy.targets:
                dropped.append(envelope)
            else:
                delivered.append(envelope)
        elif strategy.kind is StrategyKind.WRONG_VOTE:
            delivered.append(_with_body(envelope, invert_body(envelope.body)))
        elif strategy.kind is StrategyKind.EQUIVOCATE:
            if index in equivocation_flips:
                delivered.append(_with_body(envelope, invert_body(envelope.body)))
            else:
                delivered.append(envelope)
        else:
            delivered.append(envelope)

    return delivered, dropped


def _with_body(envelope: Envelope, body) -> Envelope:
    if body == envelope.body:
        return envelope
    return Envelope(envelope.round, envelope.src, envelope.dst, envelope.phase, body)


def _equivocation_flips(outbox: Sequence[Envelope], plan: FaultPlan) -> Set[int]:
    """Indices of envelopes an equivocating sender sends to the second half of its receivers."""
    groups: Dict[Tuple[NodeId, str, str], List[int]] = defaultdict(list)
    for index, envelope in enumerate(outbox):
        strategy = plan.strategy(envelope.src)
        if strategy is not None and strategy.kind is StrategyKind.EQUIVOCATE:
            groups[(envelope.src, envelope.phase, body_kind(envelope.body))].append(index)

    flips: Set[int] = set()
    for indices in groups.values():
        ordered = sorted(indices, key=lambda i: outbox[i].dst)
        flips.update(ordered[len(ordered) // 2:])
    return flips


def audit_equivocation(delivered: Sequence[Envelope]) -> Set[EquivocationKey]:
    """
    Cross-check delivered envelopes for conflicting signed statements.

    Returns:
        The (sender, phase, round) keys for which two delivered envelopes
        satisfy detect_equivocation.
    """
    seen: Dict[Tuple[NodeId, str, int, str], Envelope] = {}
    found: Set[EquivocationKey] = set()
    for envelope in delivered:
        key = (envelope.src, envelope.phase, envelope.round, body_kind(envelope.body))
        first = seen.get(key)
        if first is None:
            seen[key] = envelope
        elif detect_equivocation(first, envelope):
            found.add((envelope.src, envelope.phase, envelope.round))
    if found:
        logger.warning("Equivocation detected from %s",
                       ", ".join(f"{src}@{phase}" for src, phase, _ in sorted(found)))
    return found


def omit_target_classes(node: NodeId, k: int, n: int,
                        initiator: Optional[NodeId] = None) -> List[frozenset]:
    """
    Proper receiver subsets for an OMIT strategy, one representative per symmetry class.

    Receivers are classified as initiator, ledger primaries (rank 0) and
    backups per ledger. Backups of the same ledger are interchangeable, so a
    class is fixed by which special nodes it contains and how many backups
    of each ledger; the representative takes the lowest-ranked backups.
    """
    initiator = initiator or NodeId(0, 0)
    receivers = [other for other in all_nodes(k, n) if other != node]
    special = [other for other in receivers if other.rank == 0 or other == initiator]
    backups: Dict[int, List[NodeId]] = defaultdict(list)
    for other in receivers:
        if other not in special:
            backups[other.ledger].append(other)

    ledgers = sorted(backups)
    classes: List[frozenset] = []
    for mask in itertools.product([False, True], repeat=len(special)):
        chosen = [other for other, keep in zip(special, mask) if keep]
        for counts in itertools.product(*[range(len(backups[ledger]) + 1) for ledger in ledgers]):
            targets = list(chosen)
            for ledger, count in zip(ledgers, counts):
                targets.extend(backups[ledger][:count])
            if 0 < len(targets) < len(receivers):
                classes.append(frozenset(targets))
    return classes


def strategy_catalog(node: NodeId, k: int, n: int,
                     initiator: Optional[NodeId] = None) -> List[ByzantineStrategy]:
    """Every Byzantine strategy a node can follow, OMIT up to receiver symmetry."""
    strategies = [
        ByzantineStrategy.silent(),
        ByzantineStrategy.wrong_vote(),
        ByzantineStrategy.equivocate(),
    ]
    strategies.extend(ByzantineStrategy.omit(targets)
                      for targets in omit_target_classes(node, k, n, initiator))
    return strategies


def fault_catalog(k: int, n: int, per_ledger: int = 1,
                  exclude: Sequence[NodeId] = ()) -> Iterator[FaultPlan]:
    """
    Enumerate Byzantine fault plans with at most `per_ledger` faulty nodes per ledger.

    With per_ledger=1 this yields the empty plan, every single-fault plan and
    every plan with exactly one faulty node in each of several ledgers.

    Args:
        k: Ledger count
        n: Nodes per ledger
        per_ledger: Faulty nodes allowed per ledger (0 or 1)
        exclude: Nodes that must stay honest
    """
    if per_ledger not in (0, 1):
        raise ValueError("fault_catalog enumerates at most one faulty node per ledger")
    options_per_ledger: List[List[Optional[Tuple[NodeId, ByzantineStrategy]]]] = []
    for ledger in range(k):
        options: List[Optional[Tuple[NodeId, ByzantineStrategy]]] = [None]
        if per_ledger:
            for rank in range(n):
                node = NodeId(ledger, rank)
                if node in exclude:
                    continue
                options.extend((node, strategy) for strategy in strategy_catalog(node, k, n))
        options_per_ledger.append(options)

    for combination in itertools.product(*options_per_ledger):
        byzantine = {choice[0]: choice[1] for choice in combination if choice is not None}
        yield FaultPlan(byzantine=byzantine)
