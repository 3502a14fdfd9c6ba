"""Three-tier consensus engine: synchronous Primary rounds over a sync
list, asynchronous quorum Bridges across lists, and marketplace-wide
Global rounds with missed-round limits.

The engine functions are pure with respect to ledger records: they take
frozen snapshots and return commit/failure results carrying the replacement
records. Roster objects (PrimarySyncList) are the one mutable exception and
are owned by the driver.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .accounting import (
    Outcome,
    PhyliLedgerEntry,
    TrustPolicy,
    TrustRecord,
    apply_settlement,
    net_zero_settlement,
    update_trust,
    verify_partner_settlement,
)
from .chain import (
    ConsensusBlock,
    ContentBlock,
    MemberEntry,
    PendingBlock,
    SideChain,
    Tier,
    ZERO_DIGEST,
    detach_after,
    hash_block,
)
from .errors import (
    ConsortiumOffline,
    MajorityUnreachable,
    NoPrimaryToCover,
    NotOnInterval,
    PSLNotActive,
    QuorumUnreachable,
)


class NodeStatus(Enum):
    ACTIVE = "Active"
    OFFLINE = "Offline"
    SUSPENDED = "Suspended"
    EXCLUDED = "Excluded"


@dataclass
class PrimarySyncList:
    """Roster and schedule state for one group of cross-storing ledgers."""

    psl_id: int
    members: list[bytes]
    sync_interval: int
    last_primary: Optional[bytes] = None
    last_bridge_tick: int = 0
    missed_globals: int = 0
    status: NodeStatus = NodeStatus.ACTIVE

    def __post_init__(self) -> None:
        if len(self.members) < 2:
            raise ValueError("a sync list needs at least 2 members")
        self.members = sorted(self.members)


@dataclass(frozen=True)
class QuorumConfig:
    bridge_quorum_pct: int = 67
    bridge_max_span: int = 100
    global_period: int = 1000
    global_majority_pct: int = 51
    missed_global_limit: int = 3

    def __post_init__(self) -> None:
        for name in ("bridge_quorum_pct", "global_majority_pct"):
            pct = getattr(self, name)
            if not 50 < pct <= 100:
                raise ValueError(f"{name} must be in (50, 100], got {pct}")
        if self.bridge_max_span < 1 or self.global_period < 1:
            raise ValueError("spans must be at least 1 tick")
        if self.missed_global_limit < 0:
            raise ValueError("missed_global_limit must be non-negative")


def required_confirmations(pct: int, count: int) -> int:
    """Smallest c with c/count >= pct/100, i.e. ceil(pct * count / 100)."""
    return (pct * count + 99) // 100


class DeadlineState(Enum):
    OK = "Ok"
    MUST_BRIDGE = "MustBridge"
    SUSPEND = "Suspend"


def check_bridge_deadline(psl: PrimarySyncList, now: int, cfg: QuorumConfig) -> DeadlineState:
    """Enforce the maximum span between successful bridges.

    At exactly the span the list must bridge; past it the list is suspended
    (no further primaries or side-chain creation until a bridge succeeds).
    """
    elapsed = now - psl.last_bridge_tick
    if elapsed < cfg.bridge_max_span:
        return DeadlineState.OK
    if elapsed == cfg.bridge_max_span:
        return DeadlineState.MUST_BRIDGE
    if psl.status is NodeStatus.ACTIVE:
        psl.status = NodeStatus.SUSPENDED
    return DeadlineState.SUSPEND


@dataclass(frozen=True)
class MemberView:
    """Frozen per-member snapshot handed to a Primary round."""

    ledger_id: bytes
    online: bool
    chain: SideChain
    phyli: PhyliLedgerEntry
    trust: TrustRecord
    config_hash: bytes
    committed_seq: int
    claim_bias: int = 0
    compliant: bool = True
    compliance_reason: Optional[str] = None


@dataclass(frozen=True)
class PrimaryCommit:
    block: ConsensusBlock
    counts: Mapping[bytes, int]
    deltas: Mapping[bytes, int]
    phyli: Mapping[bytes, PhyliLedgerEntry]
    trust: Mapping[bytes, TrustRecord]


@dataclass(frozen=True)
class PrimaryFailure:
    psl_id: int
    interval_id: int
    absent: tuple[bytes, ...] = ()
    mismatched: tuple[bytes, ...] = ()
    noncompliant: tuple[bytes, ...] = ()
    trust: Mapping[bytes, TrustRecord] = field(default_factory=dict)

    @property
    def reason(self) -> str:
        if self.noncompliant:
            return "compliance"
        if self.absent:
            return "absent"
        return "mismatch"


def run_primary_consensus(
    psl: PrimarySyncList,
    members: Sequence[MemberView],
    policy: TrustPolicy,
    now: int,
) -> PrimaryCommit | PrimaryFailure:
    """One synchronous round over a sync list; requires 100% agreement.

    Success needs every member online, compliant, and claiming the same
    settlement every other member recomputes. On failure only the offending
    members take a trust miss; the survivors are left untouched so the
    failed interval can be restructured.
    """
    if now % psl.sync_interval != 0:
        raise NotOnInterval(f"tick {now} is not a multiple of {psl.sync_interval}")
    if psl.status is not NodeStatus.ACTIVE:
        raise PSLNotActive(f"sync list {psl.psl_id} is {psl.status.value}")
    interval_id = now // psl.sync_interval
    ordered = sorted(members, key=lambda m: m.ledger_id)

    absent = tuple(m.ledger_id for m in ordered if not m.online)
    noncompliant = tuple(m.ledger_id for m in ordered if m.compliant is False)
    if noncompliant:
        # Compliance violations penalize the whole list: partners carry
        # joint responsibility for each other's configuration.
        trust = {
            m.ledger_id: update_trust(m.trust, Outcome.MISS, policy) for m in ordered
        }
        return PrimaryFailure(
            psl.psl_id, interval_id, absent=absent, noncompliant=noncompliant, trust=trust
        )
    if absent:
        trust = {
            m.ledger_id: update_trust(m.trust, Outcome.MISS, policy)
            for m in ordered
            if not m.online
        }
        return PrimaryFailure(psl.psl_id, interval_id, absent=absent, trust=trust)

    counts = {m.ledger_id: m.chain.tip_sequence() - m.committed_seq for m in ordered}
    deltas = net_zero_settlement(counts)
    mismatched = []
    for m in ordered:
        claimed = dict(deltas)
        claimed[m.ledger_id] += m.claim_bias
        if not verify_partner_settlement(claimed, counts):
            mismatched.append(m.ledger_id)
    if mismatched:
        trust = {
            m.ledger_id: update_trust(m.trust, Outcome.MISS, policy)
            for m in ordered
            if m.ledger_id in mismatched
        }
        return PrimaryFailure(
            psl.psl_id, interval_id, mismatched=tuple(mismatched), trust=trust
        )

    phyli = apply_settlement({m.ledger_id: m.phyli for m in ordered}, deltas)
    trust = {m.ledger_id: update_trust(m.trust, Outcome.SUCCESS, policy) for m in ordered}
    entries = tuple(
        MemberEntry(
            ledger_id=m.ledger_id,
            last_block_hash=m.chain.tip_hash(),
            block_count=counts[m.ledger_id],
            phyli_delta=deltas[m.ledger_id],
            phyli_balance=phyli[m.ledger_id].balance,
            trust_value=trust[m.ledger_id].trust,
            config_hash=m.config_hash,
        )
        for m in ordered
    )
    block = ConsensusBlock(
        tier=Tier.PRIMARY,
        interval_id=interval_id,
        member_entries=entries,
        prev_consensus_hash=psl.last_primary or ZERO_DIGEST,
        child_hashes=(),
        timestamp=now,
    )
    return PrimaryCommit(block=block, counts=counts, deltas=deltas, phyli=phyli, trust=trust)


# --- double-spend detection ------------------------------------------------


@dataclass(frozen=True, slots=True)
class BlockLocator:
    ledger_id: bytes
    block_hash: bytes
    sequence: int
    timestamp: int

    def order_key(self) -> tuple:
        return (self.timestamp, self.ledger_id, self.sequence)


@dataclass(frozen=True)
class DoubleSpendEntry:
    tc_id: int
    serial: int
    first: BlockLocator
    second: BlockLocator
    detected_at_tier: Tier


@dataclass(frozen=True)
class DoubleSpendReport:
    entries: tuple[DoubleSpendEntry, ...] = ()

    def __bool__(self) -> bool:
        return bool(self.entries)

    def refs(self) -> set[tuple[int, int]]:
        return {(e.tc_id, e.serial) for e in self.entries}


def locate(block: ContentBlock) -> BlockLocator:
    return BlockLocator(
        ledger_id=block.ledger_id,
        block_hash=hash_block(block),
        sequence=block.sequence,
        timestamp=block.timestamp,
    )


def detect_double_spend(
    blocks: Iterable[ContentBlock], tier: Tier = Tier.GLOBAL
) -> DoubleSpendReport:
    """Exhaustive scan for (tc_id, serial) pairs appearing in two blocks.

    The earliest two blocks (by timestamp, then ledger id) are cited for
    each duplicated pair.
    """
    seen: dict[tuple[int, int], list[BlockLocator]] = defaultdict(list)
    for block in blocks:
        key = (block.license_ref.tc_id, block.license_ref.serial)
        seen[key].append(locate(block))
    entries = []
    for (tc_id, serial), locators in sorted(seen.items()):
        if len(locators) < 2:
            continue
        ordered = sorted(locators, key=BlockLocator.order_key)
        entries.append(
            DoubleSpendEntry(
                tc_id=tc_id,
                serial=serial,
                first=ordered[0],
                second=ordered[1],
                detected_at_tier=tier,
            )
        )
    return DoubleSpendReport(entries=tuple(entries))


# --- bridge tier -----------------------------------------------------------


@dataclass(frozen=True)
class BridgeParticipant:
    """One sync list entering a bridge with its uncovered primary blocks."""

    psl_id: int
    member_ids: tuple[bytes, ...]
    uncovered_primaries: tuple[ConsensusBlock, ...]
    carried_entries: tuple[MemberEntry, ...]
    trust: Mapping[bytes, TrustRecord]


@dataclass(frozen=True)
class BridgeCommit:
    block: ConsensusBlock
    covered: tuple[bytes, ...]  # primary hashes confirmed by this bridge
    trust: Mapping[bytes, TrustRecord]
    confirmations: int


@dataclass(frozen=True)
class BridgeFailure:
    report: DoubleSpendReport
    offending_ledgers: tuple[bytes, ...]


def run_bridge_consensus(
    participants: Sequence[BridgeParticipant],
    verifier_total: int,
    verifier_confirmations: int,
    duplicates: Sequence[DoubleSpendEntry],
    cfg: QuorumConfig,
    now: int,
    *,
    prev_bridge_hash: bytes = ZERO_DIGEST,
    interval_id: int = 0,
    policy: TrustPolicy = TrustPolicy(),
    recovery: bool = False,
) -> BridgeCommit | BridgeFailure:
    """Asynchronous cross-list verification by outside ledgers.

    Success needs the configured percentage of outstanding outside ledgers
    to confirm and no duplicate serials across the covered chains. Recovery
    bridges (reactivating a suspended list) may re-cover the latest primary
    instead of requiring a new one.
    """
    if not recovery:
        for p in participants:
            if not p.uncovered_primaries:
                raise NoPrimaryToCover(f"sync list {p.psl_id} has no new primaries")
    needed = required_confirmations(cfg.bridge_quorum_pct, verifier_total)
    if verifier_confirmations < needed:
        raise QuorumUnreachable(
            f"{verifier_confirmations} of {verifier_total} verifiers confirmed, "
            f"{needed} required"
        )
    if duplicates:
        report = DoubleSpendReport(entries=tuple(duplicates))
        offenders = tuple(sorted({e.second.ledger_id for e in duplicates}))
        return BridgeFailure(report=report, offending_ledgers=offenders)

    child_hashes = []
    entries: list[MemberEntry] = []
    trust: dict[bytes, TrustRecord] = {}
    for p in sorted(participants, key=lambda p: p.psl_id):
        child_hashes.extend(hash_block(b) for b in p.uncovered_primaries)
        entries.extend(p.carried_entries)
        for ledger_id, record in sorted(p.trust.items()):
            trust[ledger_id] = update_trust(record, Outcome.SUCCESS, policy)
    block = ConsensusBlock(
        tier=Tier.BRIDGE,
        interval_id=interval_id,
        member_entries=tuple(sorted(entries, key=lambda e: e.ledger_id)),
        prev_consensus_hash=prev_bridge_hash,
        child_hashes=tuple(child_hashes),
        timestamp=now,
    )
    return BridgeCommit(
        block=block,
        covered=tuple(child_hashes),
        trust=trust,
        confirmations=verifier_confirmations,
    )


# --- global tier -----------------------------------------------------------


@dataclass(frozen=True)
class PslGlobalState:
    psl_id: int
    participating: bool
    missed_globals: int


@dataclass(frozen=True)
class GlobalView:
    """Marketplace snapshot assembled by the driver for one global round."""

    interval_id: int
    prev_global_hash: bytes
    entries: tuple[MemberEntry, ...]
    child_hashes: tuple[bytes, ...]
    outstanding_pls: int
    participating_pls: tuple[bytes, ...]
    offline_pls: tuple[bytes, ...]
    cs_replicas_total: int
    cs_replicas_online: int
    psl_states: tuple[PslGlobalState, ...]
    trust: Mapping[bytes, TrustRecord]


@dataclass(frozen=True)
class GlobalCommit:
    block: ConsensusBlock
    trust: Mapping[bytes, TrustRecord]
    missed_globals: Mapping[int, int]
    excluded_psls: tuple[int, ...]


@dataclass(frozen=True)
class GlobalFailure:
    report: DoubleSpendReport
    offending_ledgers: tuple[bytes, ...]


def run_global_consensus(
    view: GlobalView,
    cfg: QuorumConfig,
    now: int,
    duplicates: Sequence[DoubleSpendEntry] = (),
    policy: TrustPolicy = TrustPolicy(),
) -> GlobalCommit | GlobalFailure:
    """Marketplace-wide round: every consortium replica plus a majority of
    outstanding ledgers must participate; serial uniqueness becomes final.

    Sync lists unable to participate still have their bridged content
    committed through the child bridges; they accrue a missed round, and
    crossing the configured limit excludes them from the roster.
    """
    if now % cfg.global_period != 0:
        raise NotOnInterval(f"tick {now} is not a multiple of {cfg.global_period}")
    if view.cs_replicas_online < view.cs_replicas_total:
        raise ConsortiumOffline(
            f"{view.cs_replicas_online} of {view.cs_replicas_total} replicas online"
        )
    needed = required_confirmations(cfg.global_majority_pct, view.outstanding_pls)
    if len(view.participating_pls) < needed:
        raise MajorityUnreachable(
            f"{len(view.participating_pls)} of {view.outstanding_pls} ledgers "
            f"participating, {needed} required"
        )
    if duplicates:
        report = DoubleSpendReport(entries=tuple(duplicates))
        offenders = tuple(sorted({e.second.ledger_id for e in duplicates}))
        return GlobalFailure(report=report, offending_ledgers=offenders)

    participating = set(view.participating_pls)
    offline = set(view.offline_pls)
    trust: dict[bytes, TrustRecord] = {}
    for ledger_id, record in sorted(view.trust.items()):
        if ledger_id in participating:
            trust[ledger_id] = update_trust(record, Outcome.SUCCESS, policy)
        elif ledger_id in offline:
            trust[ledger_id] = update_trust(record, Outcome.MISS, policy)
    missed: dict[int, int] = {}
    excluded = []
    for state in view.psl_states:
        if state.participating:
            missed[state.psl_id] = 0
        else:
            missed[state.psl_id] = state.missed_globals + 1
            if missed[state.psl_id] > cfg.missed_global_limit:
                excluded.append(state.psl_id)
    entries = []
    for entry in sorted(view.entries, key=lambda e: e.ledger_id):
        record = trust.get(entry.ledger_id)
        if record is not None and record.trust != entry.trust_value:
            entry = MemberEntry(
                ledger_id=entry.ledger_id,
                last_block_hash=entry.last_block_hash,
                block_count=entry.block_count,
                phyli_delta=entry.phyli_delta,
                phyli_balance=entry.phyli_balance,
                trust_value=record.trust,
                config_hash=entry.config_hash,
            )
        entries.append(entry)
    block = ConsensusBlock(
        tier=Tier.GLOBAL,
        interval_id=view.interval_id,
        member_entries=tuple(entries),
        prev_consensus_hash=view.prev_global_hash,
        child_hashes=view.child_hashes,
        timestamp=now,
    )
    return GlobalCommit(
        block=block,
        trust=trust,
        missed_globals=missed,
        excluded_psls=tuple(excluded),
    )


def restructure_after_failure(
    chains: Mapping[bytes, SideChain], committed_seqs: Mapping[bytes, int]
) -> dict[bytes, list[PendingBlock]]:
    """Detach every block appended since the last committed consensus.

    The detached contents keep their serials and creation order; they are
    relinked once the failed tier re-establishes synchronicity.
    """
    queues: dict[bytes, list[PendingBlock]] = {}
    for ledger_id in sorted(chains):
        queues[ledger_id] = detach_after(chains[ledger_id], committed_seqs[ledger_id])
    return queues
