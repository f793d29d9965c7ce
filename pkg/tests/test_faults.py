"""
Unit tests for fault injection and the fault-plan catalog.
"""

import unittest
import sys
import os

# Add the src directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from src.data_models import (
    ByzantineStrategy, Decision, Envelope, FaultPlan, NodeId, Proposal, Vote, XlpnTag,
)
from src.faults import (
    apply_faults, audit_equivocation, fault_catalog, omit_target_classes, strategy_catalog,
)


def broadcast(src, receivers, round_index=1, body=None):
    body = body if body is not None else Proposal(0, Vote.COMMIT)
    return [Envelope(round_index, src, dst, XlpnTag.VOTE_REQ.value, body) for dst in receivers]


A0, A1, A2, A3 = (NodeId(0, rank) for rank in range(4))
B0, B1 = NodeId(1, 0), NodeId(1, 1)


class TestApplyFaults(unittest.TestCase):
    """Test cases for the per-round fault filter."""

    def test_empty_plan_delivers_everything(self):
        outbox = broadcast(A0, [A1, A2, B0])
        delivered, dropped = apply_faults(outbox, FaultPlan(), 1)
        self.assertEqual(delivered, outbox)
        self.assertEqual(dropped, [])

    def test_silent_sender_is_dropped(self):
        outbox = broadcast(A0, [A1, A2]) + broadcast(A1, [A0, A2])
        plan = FaultPlan(byzantine={A0: ByzantineStrategy.silent()})
        delivered, dropped = apply_faults(outbox, plan, 1)
        self.assertTrue(all(envelope.src == A1 for envelope in delivered))
        self.assertEqual(len(dropped), 2)

    def test_crash_starts_at_its_round(self):
        plan = FaultPlan(crash_at={A0: 2})
        delivered, _ = apply_faults(broadcast(A0, [A1], round_index=1), plan, 1)
        self.assertEqual(len(delivered), 1)
        delivered, dropped = apply_faults(broadcast(A0, [A1], round_index=2), plan, 2)
        self.assertEqual((len(delivered), len(dropped)), (0, 1))

    def test_wrong_vote_inverts_bodies(self):
        plan = FaultPlan(byzantine={A0: ByzantineStrategy.wrong_vote()})
        delivered, _ = apply_faults(broadcast(A0, [A1, A2]), plan, 1)
        self.assertTrue(all(envelope.body == Proposal(0, Vote.ROLLBACK) for envelope in delivered))

    def test_omit_drops_targets_only(self):
        plan = FaultPlan(byzantine={A0: ByzantineStrategy.omit([A2])})
        delivered, dropped = apply_faults(broadcast(A0, [A1, A2, A3]), plan, 1)
        self.assertEqual([envelope.dst for envelope in delivered], [A1, A3])
        self.assertEqual([envelope.dst for envelope in dropped], [A2])

    def test_equivocation_is_detected(self):
        """An equivocating sender splits its receivers and the audit notices."""
        plan = FaultPlan(byzantine={A0: ByzantineStrategy.equivocate()})
        outbox = broadcast(A0, [A1, A2, A3, B0], body=Decision(Vote.COMMIT, 4))
        delivered, dropped = apply_faults(outbox, plan, 1)
        self.assertEqual(dropped, [])
        values = sorted(envelope.body.value.name for envelope in delivered)
        self.assertEqual(values, ["COMMIT", "COMMIT", "ROLLBACK", "ROLLBACK"])
        self.assertEqual(audit_equivocation(delivered), {(A0, XlpnTag.VOTE_REQ.value, 1)})

    def test_every_envelope_lands_once(self):
        plan = FaultPlan(byzantine={A0: ByzantineStrategy.omit([A1]), A2: ByzantineStrategy.silent()},
                         crash_at={A3: 1})
        outbox = broadcast(A0, [A1, A2, B0]) + broadcast(A2, [A0, B1]) + broadcast(A3, [A0])
        delivered, dropped = apply_faults(outbox, plan, 1)
        self.assertEqual(len(delivered) + len(dropped), len(outbox))

    def test_honest_traffic_has_no_equivocation(self):
        outbox = broadcast(A0, [A1, A2, A3])
        self.assertEqual(audit_equivocation(outbox), set())


class TestCatalog(unittest.TestCase):
    """Test cases for strategy enumeration."""

    def test_omit_classes_are_proper_subsets(self):
        classes = omit_target_classes(B1, 2, 4)
        receivers = {NodeId(ledger, rank) for ledger in range(2) for rank in range(4)} - {B1}
        self.assertEqual(len(classes), 46)
        for targets in classes:
            self.assertTrue(targets)
            self.assertTrue(targets < receivers)
        self.assertEqual(len(set(classes)), len(classes))

    def test_strategy_catalog_covers_every_kind(self):
        strategies = strategy_catalog(A0, 2, 4)
        kinds = {strategy.kind.value for strategy in strategies}
        self.assertEqual(kinds, {"SILENT", "WRONG_VOTE", "EQUIVOCATE", "OMIT"})
        self.assertEqual(len(strategies), 3 + 30)

    def test_fault_catalog_size(self):
        """One faulty node per ledger: 1 + 33 + 3 * 49 options per ledger at n=4."""
        plans = list(fault_catalog(2, 4))
        self.assertEqual(len(plans), 181 * 181)
        self.assertTrue(plans[0].is_empty)
        self.assertTrue(all(plan.within_budget(1) for plan in plans))

    def test_fault_catalog_exclusion(self):
        plans = list(fault_catalog(2, 4, exclude=[A0]))
        self.assertEqual(len(plans), 148 * 181)
        self.assertTrue(all(A0 not in plan.faulty_nodes for plan in plans))

    def test_fault_catalog_without_faults(self):
        self.assertEqual(list(fault_catalog(3, 4, per_ledger=0)), [FaultPlan()])
        with self.assertRaises(ValueError):
            list(fault_catalog(2, 4, per_ledger=2))


if __name__ == '__main__':
    unittest.main()
