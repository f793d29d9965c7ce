"""
Unit tests for per-phase communication complexes.
"""

import unittest
import sys
import os

# Add the src directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from src.data_models import ClusterConfig, FaultPlan, NodeId, XlpnTag
from src.errors import UnknownPhase
from src.topology import (
    CommGraph, clique_complex, components, phase_graph, skeleton, topology_report,
)

A0, A1, A2 = NodeId(0, 0), NodeId(0, 1), NodeId(0, 2)


class TestFivePhaseTopology(unittest.TestCase):
    """Test cases for the five-phase protocol's phase complexes at k=3, n=4."""

    def setUp(self):
        self.cfg = ClusterConfig(k=3, n=4, f=1)

    def test_vote_prep_is_one_simplex_per_ledger(self):
        complex_ = clique_complex(phase_graph("xlpn22", XlpnTag.VOTE_PREP.value, self.cfg))
        self.assertEqual(len(complex_.maximal_simplices), 3)
        self.assertEqual(complex_.dimension, 3)
        self.assertEqual(components(complex_), 3)
        for simplex in complex_.maximal_simplices:
            self.assertEqual(len({node.ledger for node in simplex}), 1)

    def test_vote_req_is_a_star(self):
        graph = phase_graph("xlpn22", XlpnTag.VOTE_REQ.value, self.cfg)
        self.assertEqual(len(graph.edges), 11)
        self.assertTrue(all(src == A0 for src, _ in graph.edges))
        complex_ = clique_complex(graph)
        self.assertEqual(complex_.dimension, 1)
        self.assertEqual(components(complex_), 1)

    def test_ready_reverses_vote_req(self):
        vote_req = phase_graph("xlpn22", XlpnTag.VOTE_REQ.value, self.cfg)
        ready = phase_graph("xlpn22", XlpnTag.READY.value, self.cfg)
        self.assertEqual(ready.edges, vote_req.reversed().edges)

    def test_commit_req_reverses_ready(self):
        ready = phase_graph("xlpn22", XlpnTag.READY.value, self.cfg)
        commit_req = phase_graph("xlpn22", XlpnTag.COMMIT_REQ.value, self.cfg)
        self.assertEqual(commit_req.edges, ready.reversed().edges)

    def test_commit_matches_vote_prep(self):
        prep = clique_complex(phase_graph("xlpn22", XlpnTag.VOTE_PREP.value, self.cfg))
        commit = clique_complex(phase_graph("xlpn22", XlpnTag.COMMIT.value, self.cfg))
        self.assertEqual(prep.maximal_simplices, commit.maximal_simplices)

    def test_faults_are_ignored(self):
        cfg = ClusterConfig(k=3, n=4, f=1, fault_plan=FaultPlan(crash_at={A0: 1}))
        graph = phase_graph("xlpn22", XlpnTag.VOTE_REQ.value, cfg)
        self.assertEqual(len(graph.edges), 11)

    def test_unknown_phase(self):
        with self.assertRaises(UnknownPhase):
            phase_graph("xlpn22", "HOP-FWD", self.cfg)

    def test_report(self):
        frame = topology_report("xlpn22", self.cfg)
        self.assertEqual(list(frame["phase"]), ["VOTE-REQ", "VOTE-PREP", "READY", "COMMIT-REQ", "COMMIT"])
        self.assertEqual(list(frame["dimension"]), [1, 3, 1, 1, 3])
        self.assertTrue(frame["exact"].all())


class TestRingTopology(unittest.TestCase):
    """Test cases for the ring protocol's swap edges."""

    def test_forward_hops_join_primaries(self):
        cfg = ClusterConfig(k=3, n=4, f=1)
        complex_ = clique_complex(phase_graph("podc18", "HOP-FWD", cfg))
        self.assertEqual(complex_.dimension, 2)
        self.assertIn(frozenset({NodeId(0, 0), NodeId(1, 0), NodeId(2, 0)}), complex_.maximal_simplices)
        self.assertEqual(components(complex_), 1 + 9)


class TestComplexOperations(unittest.TestCase):
    """Test cases for complexes built by hand."""

    def test_self_loop_rejected(self):
        with self.assertRaises(ValueError):
            CommGraph(frozenset({A0}), frozenset({(A0, A0)}))

    def test_stray_vertex_rejected(self):
        with self.assertRaises(ValueError):
            CommGraph(frozenset({A0}), frozenset({(A0, A1)}))

    def test_skeleton(self):
        graph = CommGraph(frozenset({A0, A1, A2}), frozenset({(A0, A1), (A1, A2), (A2, A0)}))
        triangle = clique_complex(graph)
        self.assertEqual(triangle.dimension, 2)
        one = skeleton(triangle, 1)
        self.assertEqual(one.dimension, 1)
        self.assertEqual(len(one.maximal_simplices), 3)
        self.assertEqual(skeleton(triangle, 5).maximal_simplices, triangle.maximal_simplices)
        with self.assertRaises(ValueError):
            skeleton(triangle, -1)

    def test_faces(self):
        graph = CommGraph(frozenset({A0, A1, A2}), frozenset({(A0, A1), (A1, A2), (A2, A0)}))
        triangle = clique_complex(graph)
        self.assertTrue(triangle.contains([A0, A2]))
        self.assertFalse(triangle.contains([]))
        self.assertEqual(len(triangle.faces()), 7)
        self.assertEqual(len(triangle.edges), 3)

    def test_isolated_vertices(self):
        empty = clique_complex(CommGraph(frozenset({A0, A1}), frozenset()))
        self.assertEqual(empty.dimension, 0)
        self.assertEqual(components(empty), 2)

    def test_large_complex_lower_bound(self):
        """Beyond the enumeration limit each fully connected ledger gives one simplex."""
        cfg = ClusterConfig(k=8, n=16, f=5)
        complex_ = clique_complex(phase_graph("xlpn22", XlpnTag.VOTE_PREP.value, cfg))
        self.assertFalse(complex_.exact)
        self.assertEqual(complex_.dimension, 15)
        self.assertEqual(components(complex_), 8)


if __name__ == '__main__':
    unittest.main()
