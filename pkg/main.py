#!/usr/bin/env python3
"""
Main execution script for the cross-ledger commit simulator.

Runs one failure-free transaction per protocol on a small cluster and
prints the run summaries and the complexity reconciliation.

    python main.py               # demo
    python main.py --quick-test  # exit 0 iff every reconciliation matches
    python main.py bench --grid ledger --out results
"""

import os
import sys

# Add the src directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from src.cli import DEFAULT_EXPECTATIONS, main as cli_main, single_transaction_metrics
from src.complexity import load_expectations, reconcile, unexpected_deltas
from src.data_models import Protocol
from src.utils import print_run_summary


def main(k: int = 3, n: int = 4):
    """Run every protocol once and show where simulation and formulas meet."""
    print("Cross-Ledger Commit Simulator")
    print("=" * 50)
    print(f"Cluster: k={k} ledgers, n={n} nodes per ledger\n")

    for protocol in Protocol:
        metrics = single_transaction_metrics(protocol, k, n)
        print_run_summary(metrics)
        report = reconcile(metrics, protocol, k, n)
        print(f"Reconciliation: {report.verdict.value}")
        for component, delta in report.nonzero_deltas.items():
            print(f"  {component}: {delta:+d}")
        print()


def run_quick_test() -> bool:
    """Reconcile every protocol at a small size against the documented deltas."""
    print("Running quick test...")
    expectations = load_expectations(DEFAULT_EXPECTATIONS)
    for protocol in Protocol:
        report = reconcile(single_transaction_metrics(protocol, 2, 4), protocol, 2, 4)
        mismatches = unexpected_deltas(report, expectations)
        if mismatches:
            print(f"Quick test failed for {protocol.label}: {mismatches}")
            return False
    print("Quick test completed successfully!")
    return True


if __name__ == "__main__":
    # Check for command line arguments
    if len(sys.argv) > 1 and sys.argv[1] == "--quick-test":
        sys.exit(0 if run_quick_test() else 1)
    elif len(sys.argv) > 1:
        sys.exit(cli_main(sys.argv[1:]))
    else:
        main()
