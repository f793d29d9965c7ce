"""
Unit tests for workload generation and experiment grids.
"""

import unittest
import sys
import os

# Add the src directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from src.workload import (
    DEFAULT_TXN_COUNT, ExperimentGrid, GridCell, LedgerPolicy, LedgerPolicyKind, WorkloadSpec,
    evaluation_grids, generate, grid_by_name,
)


class TestLedgerPolicy(unittest.TestCase):
    """Test cases for touched-ledger policies."""

    def test_parse(self):
        self.assertIs(LedgerPolicy.parse("ALL").kind, LedgerPolicyKind.ALL)
        self.assertEqual(LedgerPolicy.parse("2:3"), LedgerPolicy.uniform(2, 3))
        for bad in ("three", "1:3", "4:2"):
            with self.subTest(text=bad):
                with self.assertRaises(ValueError):
                    LedgerPolicy.parse(bad)


class TestGenerate(unittest.TestCase):
    """Test cases for the synthetic transaction generator."""

    def test_same_seed_same_workload(self):
        spec = WorkloadSpec(50, 6, LedgerPolicy.uniform(2, 4), seed=11, veto_rate=0.3)
        self.assertEqual(generate(spec), generate(spec))

    def test_different_seeds_differ(self):
        first = generate(WorkloadSpec(50, 6, LedgerPolicy.uniform(2, 4), seed=1))
        second = generate(WorkloadSpec(50, 6, LedgerPolicy.uniform(2, 4), seed=2))
        self.assertNotEqual([txn.touched_ledgers for txn in first], [txn.touched_ledgers for txn in second])

    def test_all_policy_touches_every_ledger(self):
        txns = generate(WorkloadSpec(5, 3))
        self.assertEqual([txn.id for txn in txns], list(range(5)))
        self.assertTrue(all(txn.touched_ledgers == frozenset({0, 1, 2}) for txn in txns))
        self.assertTrue(all(not txn.vetoes for txn in txns))

    def test_uniform_policy_bounds(self):
        for txn in generate(WorkloadSpec(200, 8, LedgerPolicy.uniform(2, 5), seed=3)):
            self.assertTrue(2 <= len(txn.touched_ledgers) <= 5)
            self.assertTrue(txn.touched_ledgers <= set(range(8)))

    def test_veto_rate(self):
        everything = generate(WorkloadSpec(30, 4, seed=5, veto_rate=1.0))
        for txn in everything:
            self.assertEqual(len(txn.vetoes), 1)
            self.assertTrue(txn.vetoes <= txn.touched_ledgers)
        vetoed = sum(1 for txn in generate(WorkloadSpec(1000, 4, seed=5, veto_rate=0.2)) if txn.vetoes)
        self.assertTrue(120 < vetoed < 280)

    def test_invalid_specs(self):
        with self.assertRaises(ValueError):
            WorkloadSpec(-1, 4)
        with self.assertRaises(ValueError):
            WorkloadSpec(1, 1)
        with self.assertRaises(ValueError):
            WorkloadSpec(1, 3, LedgerPolicy.uniform(2, 4))
        with self.assertRaises(ValueError):
            WorkloadSpec(1, 3, veto_rate=1.5)

    def test_empty_workload(self):
        self.assertEqual(generate(WorkloadSpec(0, 2)), [])


class TestGrids(unittest.TestCase):
    """Test cases for the three evaluation sweeps."""

    def test_grids(self):
        grids = {grid.name: grid for grid in evaluation_grids()}
        self.assertEqual(set(grids), {"txn", "node", "ledger"})
        self.assertEqual(grids["ledger"].k_values, (2, 4, 6, 8))
        self.assertEqual(grids["node"].n_values, (8, 16, 24, 32))
        self.assertEqual(max(grids["txn"].txn_counts), 16000)
        self.assertEqual(grids["ledger"].txn_counts, (DEFAULT_TXN_COUNT,))

    def test_cells_follow_axis(self):
        grid = grid_by_name("ledger")
        cells = list(grid.cells())
        self.assertEqual(cells[0], GridCell(DEFAULT_TXN_COUNT, 2, 16))
        self.assertEqual([grid.axis_value(cell) for cell in cells], [2, 4, 6, 8])

    def test_scaled(self):
        self.assertEqual(grid_by_name("ledger").scaled(200).txn_counts, (200,))
        self.assertEqual(grid_by_name("txn").scaled(200).txn_counts, (12, 25, 50, 62, 100, 200))
        self.assertEqual(grid_by_name("node").scaled(None).txn_counts, grid_by_name("node").txn_counts)
        small = ExperimentGrid("tiny", "k", (10,), (4,), (2,))
        self.assertIs(small.scaled(200), small)

    def test_unknown(self):
        with self.assertRaises(ValueError):
            grid_by_name("shard")
        with self.assertRaises(ValueError):
            ExperimentGrid("bad", "f", (1,), (4,), (2,))


if __name__ == '__main__':
    unittest.main()
