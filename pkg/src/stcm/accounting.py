"""Net-zero credit settlement and per-ledger trust bookkeeping.

Every function here is pure: records are frozen dataclasses and updates
return replacements. Settlement works on exact integers; the marketplace
credit supply is invariant under every exchange.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Mapping, Optional

from .errors import DegeneratePSL, UnknownLedger


class Outcome(Enum):
    SUCCESS = "Success"
    MISS = "Miss"


@dataclass(frozen=True)
class PhyliLedgerEntry:
    ledger_id: bytes
    balance: int = 0
    last_delta: int = 0


@dataclass(frozen=True)
class TrustRecord:
    ledger_id: bytes
    trust: int
    consecutive_misses: int = 0
    last_outcome: Optional[Outcome] = None


@dataclass(frozen=True)
class TrustPolicy:
    success_increment: int = 1
    miss_penalty: int = 10
    exclusion_threshold: int = 0  # 0 disables roster exclusion by trust

    def __post_init__(self) -> None:
        if self.success_increment < 0 or self.miss_penalty < 0:
            raise ValueError("trust increments must be non-negative")
        if self.miss_penalty < self.success_increment:
            raise ValueError("miss_penalty must be at least success_increment")


def net_zero_settlement(block_counts: Mapping[bytes, int]) -> dict[bytes, int]:
    """Per-member credit deltas for one synchronization interval.

    Each member pays one credit per block it created to every partner that
    stores it, and earns one credit per partner block it stores; for a group
    of size k this reduces to total - k * own_count. Deltas sum to zero
    exactly.
    """
    k = len(block_counts)
    if k < 2:
        raise DegeneratePSL(f"settlement needs at least 2 members, got {k}")
    total = sum(block_counts.values())
    return {ledger: total - k * count for ledger, count in block_counts.items()}


def apply_settlement(
    entries: Mapping[bytes, PhyliLedgerEntry], deltas: Mapping[bytes, int]
) -> dict[bytes, PhyliLedgerEntry]:
    """Fold deltas into balances; the global sum is unchanged."""
    updated = dict(entries)
    for ledger, delta in deltas.items():
        entry = updated.get(ledger)
        if entry is None:
            raise UnknownLedger(f"no phyli entry for ledger {ledger.hex()}")
        updated[ledger] = replace(entry, balance=entry.balance + delta, last_delta=delta)
    return updated


def verify_partner_settlement(
    claimed: Mapping[bytes, int], block_counts: Mapping[bytes, int]
) -> bool:
    """Recompute the settlement and require entry-for-entry equality."""
    if set(claimed) != set(block_counts):
        return False
    return dict(claimed) == net_zero_settlement(block_counts)


def update_trust(record: TrustRecord, outcome: Outcome, policy: TrustPolicy) -> TrustRecord:
    """Apply one consensus outcome; trust is clamped at zero on misses."""
    if outcome is Outcome.SUCCESS:
        return replace(
            record,
            trust=record.trust + policy.success_increment,
            consecutive_misses=0,
            last_outcome=Outcome.SUCCESS,
        )
    return replace(
        record,
        trust=max(0, record.trust - policy.miss_penalty),
        consecutive_misses=record.consecutive_misses + 1,
        last_outcome=Outcome.MISS,
    )
