"""
Adversarial timeout schedules for the ring protocol.

A schedule assigns each hop a number of idle rounds before its sender acts.
This module builds a CP-SAT model over those stalls that asks for the
cheapest schedule under which honest parties on different ledgers finalize
different outcomes, and reports when no such schedule exists.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional

from ortools.sat.python import cp_model

from .complexity import HOP_ROUNDS

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimelockSchedule:
    """
    A violating schedule.

    Attributes:
        stalls: hop -> idle rounds (hops without stall omitted)
        expired_hop: The first hop whose timelock expires
        total_stall: Sum of all stalls
    """
    stalls: Dict[int, int]
    expired_hop: int
    total_stall: int


class TimelockScheduleSearch:
    """
    Builder for the schedule model.

    A hop of the ring expires when its stall plus the HOP_ROUNDS rounds of
    actual work exceed the timelock. The first expiring hop decides the
    unwind: a forward hop (0..k-1) or the first backward hop (k) refunds
    everybody, any later backward hop leaves the ledgers claimed so far
    committed while the rest refund.
    """

    def __init__(self, k: int, timelock_rounds: int, max_stall: Optional[int] = None):
        """
        Initialize the search.

        Args:
            k: Ledgers on the ring
            timelock_rounds: Per-hop timeout
            max_stall: Upper bound on any single stall (default: the timelock)
        """
        if k < 2:
            raise ValueError(f"A ring needs at least 2 ledgers: {k}")
        if timelock_rounds < 1:
            raise ValueError(f"Timelock must be positive: {timelock_rounds}")
        self.k = k
        self.timelock_rounds = timelock_rounds
        self.max_stall = timelock_rounds if max_stall is None else max_stall
        if self.max_stall < 0:
            raise ValueError(f"Stall bound must be non-negative: {self.max_stall}")
        self.hops = list(range(2 * k))
        self.violating_hops = violating_hops(k)
        self.model = cp_model.CpModel()
        self.stall: Dict[int, cp_model.IntVar] = {}
        self.expired: Dict[int, cp_model.IntVar] = {}
        self.first: Dict[int, cp_model.IntVar] = {}
        self.solver: Optional[cp_model.CpSolver] = None

    @property
    def expiry_threshold(self) -> int:
        """Smallest stall that makes a hop expire."""
        return self.timelock_rounds - HOP_ROUNDS + 1

    def add_stall_variables(self) -> None:
        for hop in self.hops:
            self.stall[hop] = self.model.NewIntVar(0, self.max_stall, f"stall_{hop}")
            self.expired[hop] = self.model.NewBoolVar(f"expired_{hop}")

    def add_expiry_constraints(self) -> None:
        """expired[h] <=> stall[h] >= threshold."""
        threshold = self.expiry_threshold
        for hop in self.hops:
            if threshold <= 0:
                self.model.Add(self.expired[hop] == 1)
                continue
            self.model.Add(self.stall[hop] >= threshold).OnlyEnforceIf(self.expired[hop])
            self.model.Add(self.stall[hop] <= threshold - 1).OnlyEnforceIf(self.expired[hop].Not())

    def add_violation_constraints(self) -> None:
        """Exactly one backward hop past the first is the earliest expiry."""
        for hop in self.violating_hops:
            self.first[hop] = self.model.NewBoolVar(f"first_expiry_{hop}")
            self.model.AddImplication(self.first[hop], self.expired[hop])
            for earlier in range(hop):
                self.model.AddImplication(self.first[hop], self.expired[earlier].Not())
        self.model.Add(sum(self.first.values()) == 1)

    def create_objective_function(self) -> None:
        """Minimize total stall, then prefer the earliest violating hop."""
        weight = len(self.hops)
        self.model.Minimize(
            weight * sum(self.stall.values())
            + sum(hop * indicator for hop, indicator in self.first.items())
        )

    def build(self) -> None:
        logger.info("Building timelock schedule model (k=%d, timelock=%d, max stall=%d)...",
                    self.k, self.timelock_rounds, self.max_stall)
        self.add_stall_variables()
        self.add_expiry_constraints()
        self.add_violation_constraints()
        self.create_objective_function()

    def solve(self, time_limit: float = 30.0) -> Optional[TimelockSchedule]:
        """
        Solve the model.

        Returns:
            The cheapest violating schedule, or None when none exists
        """
        if not self.stall:
            self.build()
        self.solver = cp_model.CpSolver()
        self.solver.parameters.max_time_in_seconds = time_limit
        self.solver.parameters.num_workers = 1
        status = self.solver.Solve(self.model)

        if status == cp_model.INFEASIBLE:
            logger.info("No violating schedule exists.")
            return None
        if status not in (cp_model.OPTIMAL, cp_model.FEASIBLE):
            raise RuntimeError(f"Schedule search ended with status {self.solver.StatusName(status)}")
        return self.extract_solution()

    def extract_solution(self) -> TimelockSchedule:
        if self.solver is None:
            raise RuntimeError("Model must be solved before extracting a schedule")
        stalls = {hop: int(self.solver.Value(var)) for hop, var in self.stall.items()
                  if self.solver.Value(var) > 0}
        expired_hop = next(hop for hop, var in self.first.items() if self.solver.Value(var))
        schedule = TimelockSchedule(stalls, expired_hop, sum(stalls.values()))
        logger.info("Violating schedule found: stalls=%s, first expiry at hop %d", stalls, expired_hop)
        return schedule

    def get_solver_statistics(self) -> Dict[str, float]:
        if not self.solver:
            return {}
        return {
            "solve_time": self.solver.WallTime(),
            "objective_value": self.solver.ObjectiveValue(),
            "num_branches": self.solver.NumBranches(),
            "num_conflicts": self.solver.NumConflicts(),
        }


def find_atomicity_violation(k: int, timelock_rounds: int,
                             max_stall: Optional[int] = None) -> Optional[TimelockSchedule]:
    """
    Cheapest timeout schedule that makes the ring protocol finalize inconsistently.

    Args:
        k: Ledgers on the ring
        timelock_rounds: Per-hop timeout
        max_stall: Upper bound on any single stall

    Returns:
        The schedule, or None if every schedule within the bound is atomic
    """
    search = TimelockScheduleSearch(k, timelock_rounds, max_stall)
    search.build()
    return search.solve()


def violating_hops(k: int) -> List[int]:
    """Hops whose expiry breaks atomicity when they are the first to expire."""
    return list(range(k + 1, 2 * k))
