"""
Exception hierarchy for the cross-ledger simulator.

Engine-internal conditions (InitiatorFailed, NoQuorum, ViewChangeRequired,
TimelockExpired) are raised by the pure helpers and handled inside the
protocol engines. Everything else propagates to the caller.
"""

from typing import Optional


class XLedgerError(Exception):
    """Base class for all simulator errors."""


class ConfigError(XLedgerError, ValueError):
    """A configuration value violates a bound."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class StalledError(XLedgerError):
    """A round produced no messages and no node progressed."""


class LivenessViolation(XLedgerError):
    """A transaction exceeded its round budget."""


class SafetyViolation(XLedgerError):
    """Honest nodes finalized different values, or a live honest node never finalized."""


class InitiatorFailed(XLedgerError):
    """The initiator is unable to send in its expected round."""


class NoQuorum(XLedgerError):
    """No value reached 2f+1 attestations."""


class NoPrimaryAvailable(XLedgerError):
    """Every ledger primary has already failed as initiator."""


class ViewChangeRequired(XLedgerError):
    """The ledger primary is faulty or silent."""


class UnrecoverableLedger(XLedgerError):
    """Fewer than 2f+1 honest nodes remain in a ledger."""


class CoordinatorBlocked(XLedgerError):
    """The witness primary is down when the 2PC coordinator must send."""


class TimelockExpired(XLedgerError):
    """A ring hop did not complete within its timelock."""

    def __init__(self, hop: int, elapsed: Optional[int] = None):
        self.hop = hop
        self.elapsed = elapsed
        detail = f" after {elapsed} rounds" if elapsed is not None else ""
        super().__init__(f"timelock expired at hop {hop}{detail}")


class Unconfirmed(XLedgerError):
    """No reply status reached f+1 copies."""


class UnknownPhase(XLedgerError):
    """The phase tag does not belong to the protocol."""
