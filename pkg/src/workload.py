"""
Cross-ledger transaction workloads and experiment grids.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .data_models import Transaction

logger = logging.getLogger(__name__)

DEFAULT_TXN_COUNT = 5000
DEFAULT_LEDGERS = 4


class LedgerPolicyKind(Enum):
    ALL = "all"
    UNIFORM = "uniform"


@dataclass(frozen=True)
class LedgerPolicy:
    """How many ledgers each transaction touches."""
    kind: LedgerPolicyKind = LedgerPolicyKind.ALL
    low: int = 2
    high: int = 2

    def __post_init__(self):
        if self.kind is LedgerPolicyKind.UNIFORM and not 2 <= self.low <= self.high:
            raise ValueError(f"Invalid ledger range {self.low}:{self.high}")

    @classmethod
    def all(cls) -> "LedgerPolicy":
        return cls(LedgerPolicyKind.ALL)

    @classmethod
    def uniform(cls, low: int, high: int) -> "LedgerPolicy":
        return cls(LedgerPolicyKind.UNIFORM, low, high)

    @classmethod
    def parse(cls, text: str) -> "LedgerPolicy":
        """'all' or 'MIN:MAX'."""
        text = text.strip().lower()
        if text == "all":
            return cls.all()
        try:
            low, high = (int(part) for part in text.split(":", 1))
        except ValueError:
            raise ValueError(f"Ledger policy must be 'all' or MIN:MAX, got {text!r}") from None
        return cls.uniform(low, high)


@dataclass(frozen=True)
class WorkloadSpec:
    """
    Parameters of a synthetic workload.

    Attributes:
        txn_count: Number of transactions
        k: Ledgers in the consortium
        ledgers_per_txn: Touched-ledger policy
        seed: RNG seed
        veto_rate: Probability that a transaction carries one vetoing ledger
    """
    txn_count: int
    k: int
    ledgers_per_txn: LedgerPolicy = field(default_factory=LedgerPolicy.all)
    seed: int = 0
    veto_rate: float = 0.0

    def __post_init__(self):
        if self.txn_count < 0:
            raise ValueError(f"Transaction count must be non-negative: {self.txn_count}")
        if self.k < 2:
            raise ValueError(f"Need at least 2 ledgers: {self.k}")
        if self.ledgers_per_txn.kind is LedgerPolicyKind.UNIFORM and self.ledgers_per_txn.high > self.k:
            raise ValueError(f"Cannot touch {self.ledgers_per_txn.high} of {self.k} ledgers")
        if not 0.0 <= self.veto_rate <= 1.0:
            raise ValueError(f"Veto rate must lie in [0, 1]: {self.veto_rate}")


def generate(spec: WorkloadSpec) -> List[Transaction]:
    """
    Synthesize the workload.

    The result is a pure function of `spec`: ids run 0..txn_count-1 and all
    randomness comes from one numpy Generator seeded with spec.seed.
    """
    rng = np.random.default_rng(spec.seed)
    policy = spec.ledgers_per_txn
    everything = frozenset(range(spec.k))
    transactions = []

    for txn_id in range(spec.txn_count):
        if policy.kind is LedgerPolicyKind.ALL:
            touched = everything
        else:
            size = int(rng.integers(policy.low, policy.high + 1))
            touched = frozenset(int(ledger) for ledger in rng.choice(spec.k, size=size, replace=False))

        vetoes: frozenset = frozenset()
        if spec.veto_rate > 0 and rng.random() < spec.veto_rate:
            vetoes = frozenset({int(rng.choice(sorted(touched)))})
        transactions.append(Transaction(txn_id, touched, payload_tag=f"txn-{txn_id}", vetoes=vetoes))

    logger.info("Generated %d transaction(s) over %d ledgers (seed %d).", spec.txn_count, spec.k, spec.seed)
    return transactions


@dataclass(frozen=True)
class GridCell:
    txn_count: int
    k: int
    n: int


@dataclass(frozen=True)
class ExperimentGrid:
    """
    A sweep over one axis with the other two held fixed.

    Attributes:
        name: 'txn', 'node' or 'ledger'
        axis: Which field varies ('txn_count', 'n' or 'k')
        txn_counts, n_values, k_values: Axis values; fixed axes hold one value
    """
    name: str
    axis: str
    txn_counts: Tuple[int, ...]
    n_values: Tuple[int, ...]
    k_values: Tuple[int, ...]

    def __post_init__(self):
        if self.axis not in ("txn_count", "n", "k"):
            raise ValueError(f"Unknown grid axis: {self.axis}")
        if not (self.txn_counts and self.n_values and self.k_values):
            raise ValueError(f"Grid {self.name} has an empty axis")

    def cells(self) -> Iterator[GridCell]:
        for txn_count in self.txn_counts:
            for k in self.k_values:
                for n in self.n_values:
                    yield GridCell(txn_count, k, n)

    def axis_value(self, cell: GridCell) -> int:
        return getattr(cell, self.axis)

    def scaled(self, max_txns: Optional[int]) -> "ExperimentGrid":
        """Shrink transaction counts proportionally so the largest becomes `max_txns`."""
        if not max_txns:
            return self
        largest = max(self.txn_counts)
        if largest <= max_txns:
            return self
        counts = tuple(max(1, count * max_txns // largest) for count in self.txn_counts)
        return ExperimentGrid(self.name, self.axis, counts, self.n_values, self.k_values)


def evaluation_grids() -> List[ExperimentGrid]:
    """The transaction, node and ledger sweeps of the evaluation."""
    return [
        ExperimentGrid("txn", "txn_count", (1000, 2000, 4000, 5000, 8000, 16000), (32,), (DEFAULT_LEDGERS,)),
        ExperimentGrid("node", "n", (DEFAULT_TXN_COUNT,), (8, 16, 24, 32), (DEFAULT_LEDGERS,)),
        ExperimentGrid("ledger", "k", (DEFAULT_TXN_COUNT,), (16,), (2, 4, 6, 8)),
    ]


def grid_by_name(name: str, grids: Sequence[ExperimentGrid] = ()) -> ExperimentGrid:
    for grid in grids or evaluation_grids():
        if grid.name == name:
            return grid
    raise ValueError(f"Unknown grid: {name}")
