"""Block structures, canonical encoding, side-chain maintenance and pruning.

Content blocks use a fixed big-endian layout so sizes are measurable
bit-exactly; consensus blocks get their own canonical encoding for hashing
and storage accounting. All block values are immutable once built; the
SideChain container is the single mutable holder.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from .errors import DecodeError, DuplicateSerial, NotCovered, PayloadTooLarge

DIGEST_LEN = 32
LEDGER_ID_LEN = 16
HEADER_LEN = 4 * DIGEST_LEN + LEDGER_ID_LEN + 4 * 8  # 176

# Default public-payload cap: header(176) + 208 = 384 bytes, under the
# 400-byte block budget with headroom for a ~500-byte production layout.
PAYLOAD_CAP = 208

ZERO_DIGEST = bytes(DIGEST_LEN)

_TAIL = struct.Struct(">QQQQ")  # sequence, timestamp, tc_id, serial
_U64_MAX = 2**64 - 1


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


class Tier(Enum):
    PRIMARY = 1
    BRIDGE = 2
    GLOBAL = 3


@dataclass(frozen=True, slots=True)
class LicenseRef:
    """One pre-purchased execution right: (contract id, serial number)."""

    tc_id: int
    serial: int


@dataclass(frozen=True, slots=True)
class ContentBlock:
    prev_hash: bytes
    psl_anchor: bytes
    tc_signature: bytes
    payload_hash: bytes
    ledger_id: bytes
    sequence: int
    timestamp: int
    license_ref: LicenseRef
    public_payload: bytes

    def __post_init__(self) -> None:
        for name in ("prev_hash", "psl_anchor", "tc_signature", "payload_hash"):
            if len(getattr(self, name)) != DIGEST_LEN:
                raise ValueError(f"{name} must be {DIGEST_LEN} bytes")
        if len(self.ledger_id) != LEDGER_ID_LEN:
            raise ValueError(f"ledger_id must be {LEDGER_ID_LEN} bytes")
        for val in (self.sequence, self.timestamp, self.license_ref.tc_id, self.license_ref.serial):
            if not 0 <= val <= _U64_MAX:
                raise ValueError("integer field out of unsigned 64-bit range")


def encode_block(block: ContentBlock, payload_cap: int = PAYLOAD_CAP) -> bytes:
    """Canonical fixed-layout encoding; length is exactly 176 + payload."""
    if len(block.public_payload) > payload_cap:
        raise PayloadTooLarge(
            f"public payload is {len(block.public_payload)} bytes, cap is {payload_cap}"
        )
    return b"".join(
        (
            block.prev_hash,
            block.psl_anchor,
            block.tc_signature,
            block.payload_hash,
            block.ledger_id,
            _TAIL.pack(
                block.sequence,
                block.timestamp,
                block.license_ref.tc_id,
                block.license_ref.serial,
            ),
            block.public_payload,
        )
    )


def decode_block(data: bytes) -> ContentBlock:
    """Inverse of encode_block."""
    if len(data) < HEADER_LEN:
        raise DecodeError(f"encoding is {len(data)} bytes, header needs {HEADER_LEN}")
    off = 0
    digests = []
    for _ in range(4):
        digests.append(data[off : off + DIGEST_LEN])
        off += DIGEST_LEN
    ledger_id = data[off : off + LEDGER_ID_LEN]
    off += LEDGER_ID_LEN
    sequence, timestamp, tc_id, serial = _TAIL.unpack_from(data, off)
    off += _TAIL.size
    return ContentBlock(
        prev_hash=digests[0],
        psl_anchor=digests[1],
        tc_signature=digests[2],
        payload_hash=digests[3],
        ledger_id=ledger_id,
        sequence=sequence,
        timestamp=timestamp,
        license_ref=LicenseRef(tc_id, serial),
        public_payload=data[off:],
    )


@dataclass(frozen=True, slots=True)
class MemberEntry:
    """Per-ledger carry-forward record inside a consensus block."""

    ledger_id: bytes
    last_block_hash: bytes
    block_count: int
    phyli_delta: int
    phyli_balance: int
    trust_value: int
    config_hash: bytes


@dataclass(frozen=True, slots=True)
class ConsensusBlock:
    tier: Tier
    interval_id: int
    member_entries: tuple[MemberEntry, ...]
    prev_consensus_hash: bytes
    child_hashes: tuple[bytes, ...]
    timestamp: int


_ENTRY = struct.Struct(">Qqqq")  # block_count, phyli_delta, phyli_balance, trust(signed-safe)


def encode_consensus_block(block: ConsensusBlock) -> bytes:
    """Canonical encoding used both for hashing and size accounting."""
    parts = [
        struct.pack(">BQQ", block.tier.value, block.interval_id, block.timestamp),
        block.prev_consensus_hash,
        struct.pack(">I", len(block.member_entries)),
    ]
    for e in block.member_entries:
        parts.append(e.ledger_id)
        parts.append(e.last_block_hash)
        parts.append(_ENTRY.pack(e.block_count, e.phyli_delta, e.phyli_balance, e.trust_value))
        parts.append(e.config_hash)
    parts.append(struct.pack(">I", len(block.child_hashes)))
    parts.extend(block.child_hashes)
    return b"".join(parts)


def hash_block(block: ContentBlock | ConsensusBlock) -> bytes:
    """SHA-256 over the block's canonical encoding."""
    if isinstance(block, ContentBlock):
        return sha256(encode_block(block))
    return sha256(encode_consensus_block(block))


@dataclass(frozen=True, slots=True)
class Checkpoint:
    digest: bytes
    sequence: int


@dataclass(frozen=True, slots=True)
class PendingBlock:
    """Block contents awaiting (re-)linking onto a chain."""

    tc_signature: bytes
    payload_hash: bytes
    license_ref: LicenseRef
    public_payload: bytes
    created_at: int


@dataclass(frozen=True, slots=True)
class ChainReport:
    ok: bool
    violation_index: Optional[int] = None
    reason: Optional[str] = None


class SideChain:
    """Append-only chain for one ledger, prunable at consensus checkpoints.

    Serials stay reserved across pruning so marketplace uniqueness checks
    survive the removal of old blocks.
    """

    __slots__ = ("ledger_id", "blocks", "checkpoint", "serials", "_tip_hash")

    def __init__(self, ledger_id: bytes) -> None:
        if len(ledger_id) != LEDGER_ID_LEN:
            raise ValueError(f"ledger_id must be {LEDGER_ID_LEN} bytes")
        self.ledger_id = ledger_id
        self.blocks: list[ContentBlock] = []
        self.checkpoint: Optional[Checkpoint] = None
        self.serials: set[LicenseRef] = set()
        self._tip_hash = ZERO_DIGEST

    def __len__(self) -> int:
        return len(self.blocks)

    def tip_hash(self) -> bytes:
        return self._tip_hash

    def tip_sequence(self) -> int:
        """Sequence of the newest block; -1 for a chain with no history."""
        if self.blocks:
            return self.blocks[-1].sequence
        if self.checkpoint is not None:
            return self.checkpoint.sequence
        return -1

    def block_at(self, sequence: int) -> ContentBlock:
        base = self.blocks[0].sequence
        return self.blocks[sequence - base]


def append_content_block(
    chain: SideChain,
    *,
    public_payload: bytes,
    tc_signature: bytes,
    payload_hash: bytes,
    license_ref: LicenseRef,
    anchor: bytes,
    now: int,
    payload_cap: int = PAYLOAD_CAP,
) -> ContentBlock:
    """Append one block; prev_hash links to the tip (zero sentinel at genesis)."""
    if len(public_payload) > payload_cap:
        raise PayloadTooLarge(
            f"public payload is {len(public_payload)} bytes, cap is {payload_cap}"
        )
    if license_ref in chain.serials:
        raise DuplicateSerial(f"serial {license_ref} already used on this chain")
    block = ContentBlock(
        prev_hash=chain.tip_hash(),
        psl_anchor=anchor,
        tc_signature=tc_signature,
        payload_hash=payload_hash,
        ledger_id=chain.ledger_id,
        sequence=chain.tip_sequence() + 1,
        timestamp=now,
        license_ref=license_ref,
        public_payload=public_payload,
    )
    chain.blocks.append(block)
    chain.serials.add(license_ref)
    chain._tip_hash = hash_block(block)
    return block


def verify_chain(chain: SideChain) -> ChainReport:
    """Check hash links and sequence ordering from the checkpoint forward."""
    if chain.checkpoint is not None:
        expected_prev = chain.checkpoint.digest
        prev_seq = chain.checkpoint.sequence
    else:
        expected_prev = ZERO_DIGEST
        prev_seq = -1
    for i, block in enumerate(chain.blocks):
        if block.prev_hash != expected_prev:
            return ChainReport(False, i, "prev_hash mismatch")
        if block.sequence <= prev_seq:
            return ChainReport(False, i, "sequence not strictly increasing")
        if block.ledger_id != chain.ledger_id:
            return ChainReport(False, i, "foreign ledger_id")
        prev_seq = block.sequence
        expected_prev = hash_block(block)
    if chain.blocks and expected_prev != chain._tip_hash:
        return ChainReport(False, len(chain.blocks) - 1, "stale tip hash")
    return ChainReport(True)


def relink_queued_blocks(
    chain: SideChain,
    queued: Sequence[PendingBlock],
    anchor: bytes,
    payload_cap: int = PAYLOAD_CAP,
) -> list[ContentBlock]:
    """Rebuild queued contents onto the current tip, preserving creation order.

    Each pending block keeps its payload, signature, license serial and
    creation timestamp but gets fresh prev_hash/sequence/anchor linkage.
    """
    for pending in queued:
        if pending.license_ref in chain.serials:
            raise DuplicateSerial(
                f"serial {pending.license_ref} already committed on this chain"
            )
    relinked = []
    for pending in queued:
        relinked.append(
            append_content_block(
                chain,
                public_payload=pending.public_payload,
                tc_signature=pending.tc_signature,
                payload_hash=pending.payload_hash,
                license_ref=pending.license_ref,
                anchor=anchor,
                now=pending.created_at,
                payload_cap=payload_cap,
            )
        )
    return relinked


def detach_after(chain: SideChain, sequence: int) -> list[PendingBlock]:
    """Remove all blocks with sequence > `sequence`, returning their contents.

    Used to restructure chains after a failed consensus: the detached
    contents keep their serials and creation timestamps for relinking.
    """
    if not chain.blocks or chain.blocks[-1].sequence <= sequence:
        return []
    base = chain.blocks[0].sequence
    cut = max(sequence + 1 - base, 0)
    detached = chain.blocks[cut:]
    del chain.blocks[cut:]
    pendings = []
    for block in detached:
        chain.serials.discard(block.license_ref)
        pendings.append(
            PendingBlock(
                tc_signature=block.tc_signature,
                payload_hash=block.payload_hash,
                license_ref=block.license_ref,
                public_payload=block.public_payload,
                created_at=block.timestamp,
            )
        )
    if chain.blocks:
        chain._tip_hash = hash_block(chain.blocks[-1])
    elif chain.checkpoint is not None:
        chain._tip_hash = chain.checkpoint.digest
    else:
        chain._tip_hash = ZERO_DIGEST
    return pendings


def prune_before_checkpoint(chain: SideChain, consensus: ConsensusBlock) -> int:
    """Drop blocks at or before the hash this consensus covers for the chain.

    Returns the number of blocks removed. Balances remain recoverable from
    the consensus member entries alone.
    """
    entry = next(
        (e for e in consensus.member_entries if e.ledger_id == chain.ledger_id), None
    )
    if entry is None:
        raise NotCovered(f"consensus does not cover ledger {chain.ledger_id.hex()}")
    covered = entry.last_block_hash
    if covered == ZERO_DIGEST:
        return 0  # nothing committed for this ledger yet
    if chain.checkpoint is not None and chain.checkpoint.digest == covered:
        return 0  # already pruned to this point
    # The covered block is normally at or near the tip; search backwards.
    idx = None
    for i in range(len(chain.blocks) - 1, -1, -1):
        if hash_block(chain.blocks[i]) == covered:
            idx = i
            break
    if idx is None:
        raise NotCovered("covered hash not present in chain")
    chain.checkpoint = Checkpoint(digest=covered, sequence=chain.blocks[idx].sequence)
    removed = idx + 1
    del chain.blocks[: idx + 1]
    if not chain.blocks:
        chain._tip_hash = covered
    return removed


def serialize_chain(chain: SideChain) -> bytes:
    """Length-prefixed concatenation of canonical block encodings."""
    parts = [struct.pack(">Q", len(chain.blocks))]
    for block in chain.blocks:
        enc = encode_block(block, payload_cap=len(block.public_payload))
        parts.append(struct.pack(">H", len(enc)))
        parts.append(enc)
    return b"".join(parts)


def deserialize_chain(ledger_id: bytes, data: bytes) -> SideChain:
    """Inverse of serialize_chain; rebuilds container bookkeeping."""
    chain = SideChain(ledger_id)
    (count,) = struct.unpack_from(">Q", data, 0)
    off = 8
    for _ in range(count):
        (length,) = struct.unpack_from(">H", data, off)
        off += 2
        block = decode_block(data[off : off + length])
        off += length
        chain.blocks.append(block)
        chain.serials.add(block.license_ref)
    if chain.blocks:
        chain._tip_hash = hash_block(chain.blocks[-1])
    return chain


def copy_chain(chain: SideChain) -> SideChain:
    """Independent container sharing the (immutable) block objects."""
    dup = SideChain(chain.ledger_id)
    dup.blocks = list(chain.blocks)
    dup.checkpoint = chain.checkpoint
    dup.serials = set(chain.serials)
    dup._tip_hash = chain._tip_hash
    return dup


def iter_blocks(chains: Iterable[SideChain]) -> Iterable[ContentBlock]:
    for chain in chains:
        yield from chain.blocks
