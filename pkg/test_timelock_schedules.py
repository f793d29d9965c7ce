#!/usr/bin/env python3
"""
Test script for the ring protocol's timelock schedule search.
"""

import sys
import os

# Add the src directory to the Python path
sys.path.insert(0, os.path.join(os.path.dirname(__file__), 'src'))

from src.baselines import Podc18Engine
from src.constraints import TimelockScheduleSearch, find_atomicity_violation
from src.data_models import ClusterConfig, Transaction
from src.simulator import Simulator


def replay(k, timelock_rounds, stalls):
    cfg = ClusterConfig(k=k, n=4, f=1, timelock_rounds=timelock_rounds)
    engine = Podc18Engine(cfg, hop_stalls=stalls)
    fragment = Simulator(cfg).run_transaction(engine, Transaction(0, frozenset(range(k))))
    return engine, fragment


def test_schedule_grid():
    """Search and replay the cheapest violating schedule for several ring sizes."""
    print("Testing Timelock Schedule Search")
    print("=" * 40)

    all_ok = True
    for k in (2, 3, 4, 6):
        for timelock in (6, 8, 12):
            search = TimelockScheduleSearch(k, timelock)
            schedule = search.solve()
            if schedule is None:
                print(f"\nk={k}, timelock={timelock}: no violating schedule")
                continue
            engine, fragment = replay(k, timelock, schedule.stalls)
            stats = search.get_solver_statistics()
            print(f"\nk={k}, timelock={timelock}:")
            print(f"  Stalls: {schedule.stalls} (total {schedule.total_stall})")
            print(f"  First expiry: hop {schedule.expired_hop}")
            print(f"  Replay: {fragment.rounds} rounds, atomic={fragment.atomic}, "
                  f"outcome per ledger={ {ledger: vote.name for ledger, vote in engine.state.outcome.items()} }")
            print(f"  Solver: {stats['solve_time']:.3f}s, {stats['num_branches']} branches")
            if fragment.atomic:
                print("  ✗ Replay stayed atomic")
                all_ok = False
            else:
                print("  ✓ Replay finalized inconsistently")
    return all_ok


def test_bounded_stalls():
    """Stalls shorter than the expiry threshold never break atomicity."""
    print("\nTesting Bounded Stalls")
    print("=" * 25)

    for k, timelock in ((2, 8), (3, 10)):
        bound = timelock - 5
        schedule = find_atomicity_violation(k, timelock, max_stall=bound)
        print(f"  k={k}, timelock={timelock}, max stall {bound}: "
              f"{'violation found' if schedule else 'always atomic'}")


if __name__ == "__main__":
    print("Testing Timelock Schedules\n")

    ok = test_schedule_grid()
    test_bounded_stalls()

    if ok:
        print("\nAll tests completed successfully!")
    else:
        sys.exit(1)
