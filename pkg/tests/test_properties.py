"""
Property-based tests for quorum arithmetic, fault filtering and commit validity.
"""

import unittest
import sys
import os

from hypothesis import given, settings, strategies as st

# Add the src directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from src.complexity import messages_formula
from src.data_models import (
    ClusterConfig, Envelope, FaultPlan, NodeId, Proposal, Transaction, Vote, XlpnTag, all_nodes,
    max_faulty, quorum_size, value_of,
)
from src.faults import apply_faults, strategy_catalog
from src.protocols import create_engine
from src.simulator import Simulator
from src.utils import validate_config
from src.workload import LedgerPolicy, WorkloadSpec, generate
from src.xlpn22 import certificate_backs_commit

settings.register_profile("sweep", max_examples=10000, derandomize=True, deadline=None)
SWEEP = settings.get_profile("sweep")

A0 = NodeId(0, 0)
OUTBOX = [Envelope(1, A0, node, XlpnTag.VOTE_REQ.value, Proposal(0, Vote.COMMIT))
          for node in all_nodes(2, 4) if node != A0]


@st.composite
def transactions(draw, max_k=4):
    k = draw(st.integers(min_value=2, max_value=max_k))
    vetoes = draw(st.sets(st.integers(min_value=0, max_value=k - 1), max_size=k))
    return k, Transaction(0, frozenset(range(k)), vetoes=frozenset(vetoes))


@st.composite
def single_fault_runs(draw):
    k, txn = draw(transactions(max_k=3))
    node = draw(st.sampled_from(all_nodes(k, 4)))
    strategy = draw(st.sampled_from(strategy_catalog(node, k, 4)))
    return k, txn, FaultPlan(byzantine={node: strategy})


class TestQuorumProperties(unittest.TestCase):
    """Two quorums of a ledger with n = 3f + 1 nodes overlap in an honest node."""

    @settings(derandomize=True)
    @given(st.integers(min_value=0, max_value=200))
    def test_two_quorums_share_an_honest_node(self, f):
        n = 3 * f + 1
        self.assertEqual(max_faulty(n), f)
        self.assertGreaterEqual(2 * quorum_size(f) - n, f + 1)


class TestFaultFilterProperties(unittest.TestCase):
    """Every envelope lands in exactly one of delivered or dropped."""

    @settings(derandomize=True, deadline=None)
    @given(st.sampled_from(strategy_catalog(A0, 2, 4)), st.one_of(st.none(), st.integers(1, 3)))
    def test_partition(self, strategy, crash_round):
        plan = FaultPlan(byzantine={A0: strategy},
                         crash_at={A0: crash_round} if crash_round is not None else {})
        delivered, dropped = apply_faults(OUTBOX, plan, 1)
        self.assertEqual(len(delivered) + len(dropped), len(OUTBOX))
        self.assertEqual(sorted(envelope.dst for envelope in delivered + dropped),
                         sorted(envelope.dst for envelope in OUTBOX))
        self.assertTrue(all(envelope.src == A0 for envelope in delivered))


class TestValidity(unittest.TestCase):
    """Failure-free runs commit exactly when no touched ledger vetoes."""

    @SWEEP
    @given(transactions(), st.sampled_from(["xlpn22", "vldb20", "podc18"]))
    def test_outcome_follows_votes(self, drawn, protocol):
        k, txn = drawn
        cfg = ClusterConfig(k=k, n=4, f=1)
        metrics = Simulator(cfg).run(create_engine(protocol, cfg), [txn])
        expected = Vote.ROLLBACK if txn.vetoes else Vote.COMMIT
        self.assertIs(metrics.txn_outcomes[0], expected)
        self.assertEqual({decision.value for decision in metrics.decisions.values()}, {expected})

    @SWEEP
    @given(st.integers(min_value=2, max_value=5), st.sampled_from([4, 7, 10]))
    def test_five_phase_counts_match_formula(self, k, n):
        cfg = ClusterConfig(k=k, n=n, f=max_faulty(n))
        metrics = Simulator(cfg).run(create_engine("xlpn22", cfg), [Transaction(0, frozenset(range(k)))])
        self.assertEqual(metrics.rounds, 5)
        self.assertEqual(metrics.messages_total, messages_formula("xlpn22", k, n))


class TestCommitCertificate(unittest.TestCase):
    """A COMMIT is finalized only behind a COMMIT READY vote from every other node."""

    @SWEEP
    @given(single_fault_runs())
    def test_commit_needs_every_ready_vote(self, drawn):
        k, txn, plan = drawn
        cfg = validate_config(ClusterConfig(k=k, n=4, f=1, fault_plan=plan))
        engine = create_engine("xlpn22", cfg)
        metrics = Simulator(cfg).run(engine, [txn])
        values = {decision.value for decision in metrics.decisions.values()}
        self.assertEqual(len(values), 1)
        if values != {Vote.COMMIT}:
            return
        self.assertFalse(txn.vetoes)
        decision = engine.state.decision
        self.assertIs(decision.value, Vote.COMMIT)
        self.assertEqual(len(decision.certificate), k * 4 - 1)
        self.assertTrue(all(value_of(envelope.body) is Vote.COMMIT for envelope in decision.certificate))
        self.assertTrue(certificate_backs_commit(decision.certificate, cfg.nodes()))


class TestWorkloadProperties(unittest.TestCase):
    """Generated workloads are a pure function of their parameters."""

    @settings(max_examples=25, derandomize=True, deadline=None)
    @given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=2, max_value=6))
    def test_deterministic(self, seed, k):
        spec = WorkloadSpec(20, k, LedgerPolicy.uniform(2, k), seed=seed, veto_rate=0.5)
        self.assertEqual(generate(spec), generate(spec))


if __name__ == '__main__':
    unittest.main()
