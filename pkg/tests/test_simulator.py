"""
Unit tests for the lock-step simulator.
"""

import unittest
import sys
import os

# Add the src directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from src.data_models import ClusterConfig, Decision, Envelope, NodeId, Transaction, Vote, XlpnTag
from src.errors import LivenessViolation, StalledError
from src.protocols import create_engine, parse_protocols
from src.data_models import Protocol
from src.simulator import ProtocolEngine, RunMetrics, Simulator, create_simulator, run_to_completion


class ChattyEngine(ProtocolEngine):
    """Sends one envelope per round and finishes after `length` rounds."""

    def __init__(self, cfg, length=3, formula=3, talk=True, restart_every=0):
        super().__init__(cfg)
        self.restart_every = restart_every
        self.length = length
        self.formula = formula
        self.talk = talk
        self.rounds_seen = 0

    def begin(self, txn):
        self.txn = txn
        self.rounds_seen = 0

    def emit(self, round_index):
        if not self.talk:
            return []
        return [Envelope(round_index, NodeId(0, 0), NodeId(0, 1), XlpnTag.READY.value, Vote.COMMIT)]

    def deliver(self, round_index, delivered, equivocations):
        self.rounds_seen += 1
        if self.restart_every and self.rounds_seen % self.restart_every == 0:
            self.attempt += 1
        return self.talk

    @property
    def done(self):
        return self.rounds_seen >= self.length

    def participants(self):
        return []

    def node_decisions(self):
        return {}

    def outcome(self):
        return Vote.COMMIT

    def formula_rounds(self):
        return self.formula


TXN = Transaction(0, frozenset({0, 1}))


class TestStepping(unittest.TestCase):
    """Test cases for round stepping and accounting."""

    def setUp(self):
        self.cfg = ClusterConfig(k=2, n=4, f=1)

    def test_rounds_and_messages(self):
        simulator = Simulator(self.cfg)
        fragment = simulator.run_transaction(ChattyEngine(self.cfg), TXN)
        self.assertEqual(fragment.rounds, 3)
        self.assertEqual(fragment.messages_by_phase[XlpnTag.READY.value], 3)
        self.assertEqual(len(simulator.reports), 3)
        self.assertTrue(simulator.complete)

    def test_silent_round_stalls(self):
        with self.assertRaises(StalledError):
            Simulator(self.cfg).run_transaction(ChattyEngine(self.cfg, talk=False), TXN)

    def test_liveness_budget(self):
        engine = ChattyEngine(self.cfg, length=20, formula=2)
        with self.assertRaises(LivenessViolation):
            Simulator(self.cfg, liveness_slack=3).run_transaction(engine, TXN)

    def test_budget_spans_attempts(self):
        """Restarting does not refill the round budget."""
        engine = ChattyEngine(self.cfg, length=7, formula=2, restart_every=2)
        with self.assertRaises(LivenessViolation):
            Simulator(self.cfg, liveness_slack=3).run_transaction(engine, TXN)

    def test_restarts_within_budget(self):
        engine = ChattyEngine(self.cfg, length=5, formula=2, restart_every=2)
        fragment = Simulator(self.cfg, liveness_slack=3).run_transaction(engine, TXN)
        self.assertEqual(fragment.rounds, 5)
        self.assertEqual(fragment.attempts, 3)

    def test_metrics_consistency(self):
        with self.assertRaises(ValueError):
            RunMetrics("x", 1, 3, {"READY": 2}, {}, 1)


class TestRuns(unittest.TestCase):
    """Test cases for whole-workload runs."""

    def test_memoized_workload(self):
        """Identical failure-free transactions are simulated once."""
        cfg = ClusterConfig(k=2, n=4, f=1)
        simulator = create_simulator(cfg)
        txns = [Transaction(i, frozenset({0, 1})) for i in range(4)]
        metrics = simulator.run(create_engine(Protocol.XLPN22, cfg), txns)
        self.assertEqual(metrics.rounds, 20)
        self.assertEqual(len(simulator.reports), 5)
        self.assertEqual(metrics.txn_count, 4)
        self.assertEqual(metrics.rounds_by_txn, {0: 5, 1: 5, 2: 5, 3: 5})

    def test_memoized_and_direct_runs_agree(self):
        cfg = ClusterConfig(k=3, n=4, f=1)
        txns = [Transaction(i, frozenset({0, 1, 2}), vetoes=frozenset({1}) if i % 2 else frozenset())
                for i in range(4)]
        cached = Simulator(cfg).run(create_engine("vldb20", cfg), txns)
        direct = Simulator(cfg, memoize=False).run(create_engine("vldb20", cfg), txns)
        self.assertEqual(cached.messages_by_phase, direct.messages_by_phase)
        self.assertEqual(cached.txn_outcomes, direct.txn_outcomes)
        self.assertEqual(cached.rollback_count, 2)

    def test_sim_time(self):
        cfg = ClusterConfig(k=3, n=4, f=1, round_latency=10, message_latency=1)
        metrics = run_to_completion(create_engine("xlpn22", cfg), cfg, [Transaction(0, frozenset({0, 1, 2}))])
        self.assertEqual(metrics.sim_time, 5 * 10 + 237)

    def test_trace_lines_are_ordered(self):
        cfg = ClusterConfig(k=2, n=4, f=1)
        simulator = Simulator(cfg, trace=True)
        simulator.run(create_engine("xlpn22", cfg), [TXN])
        lines = simulator.trace_lines()
        self.assertEqual(len(lines), sum(report.offered for report in simulator.reports))
        rounds = [int(line.split("\t")[0]) for line in lines]
        self.assertEqual(rounds, sorted(rounds))
        self.assertTrue(lines[0].startswith("1\tA0\tA1\tVOTE-REQ\t"))

    def test_decisions_cover_every_node(self):
        cfg = ClusterConfig(k=2, n=4, f=1)
        metrics = Simulator(cfg).run(create_engine("xlpn22", cfg), [TXN])
        self.assertEqual(len(metrics.decisions), 8)
        self.assertEqual({decision.value for decision in metrics.decisions.values()}, {Vote.COMMIT})
        self.assertIsInstance(next(iter(metrics.decisions.values())), Decision)


class TestRegistry(unittest.TestCase):
    """Test cases for protocol selection."""

    def test_parse_protocols(self):
        self.assertEqual(parse_protocols("all"), list(Protocol))
        self.assertEqual(parse_protocols("podc18,xlpn22"), [Protocol.XLPN22, Protocol.PODC18])
        with self.assertRaises(ValueError):
            parse_protocols(",")
        with self.assertRaises(ValueError):
            parse_protocols("paxos")

    def test_create_engine(self):
        cfg = ClusterConfig(k=2, n=4, f=1)
        self.assertEqual(create_engine("VLDB-20", cfg).name, "vldb20")
        engine = create_engine(Protocol.PODC18, cfg, hop_stalls={1: 2})
        self.assertEqual(engine.hop_stalls, {1: 2})


if __name__ == '__main__':
    unittest.main()
