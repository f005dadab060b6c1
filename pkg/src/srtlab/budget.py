"""Accounting of recorded/processed audio seconds, the quantity the
adaptive procedure minimizes."""

from __future__ import annotations

from dataclasses import dataclass, field


class BudgetError(ValueError):
    pass


@dataclass
class BudgetLedger:
    """Recorded seconds by role; reused signals are counted once."""

    seconds_by_role: dict[str, float] = field(default_factory=dict)
    recorded_sets: set[tuple[str, float]] = field(default_factory=set)
    iterations: dict[str, int] = field(default_factory=dict)
    wall_s: float = 0.0

    def record(self, role: str, snr: float, seconds: float) -> None:
        if seconds < 0:
            raise BudgetError("recorded seconds must be non-negative")
        key = (role, float(snr))
        if key in self.recorded_sets and seconds > 0:
            raise BudgetError(f"{key} recorded twice")
        self.recorded_sets.add(key)
        self.seconds_by_role[role] = self.seconds_by_role.get(role, 0.0) + seconds

    def record_extension(self, role: str, snr: float, seconds: float) -> None:
        """Additional material for an already-recorded (role, snr) set."""
        self.seconds_by_role[role] = self.seconds_by_role.get(role, 0.0) + seconds

    def bump(self, counter: str, by: int = 1) -> None:
        self.iterations[counter] = self.iterations.get(counter, 0) + by

    def total_seconds(self, roles=None) -> float:
        if roles is None:
            return sum(self.seconds_by_role.values())
        return sum(self.seconds_by_role.get(r, 0.0) for r in roles)


def budget_total(ledger: BudgetLedger) -> dict[str, float]:
    """Seconds by role plus the overall total."""
    out = dict(ledger.seconds_by_role)
    out["total"] = ledger.total_seconds()
    return out
