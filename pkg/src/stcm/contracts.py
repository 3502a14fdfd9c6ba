"""Transaction contract prototypes, execution and license accounting.

A prototype holds declarative validation rules plus a per-field privacy
split. Executing a committed prototype validates the input record, encodes
the public and private halves separately, and spends exactly one license
serial. Serial blocks are allocated from a per-contract counter at purchase
time, so (tc_id, serial) pairs stay unique marketplace-wide.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Mapping, Optional, Sequence

from .errors import (
    LicenseExhausted,
    MalformedRule,
    NotCommitted,
    PrivateOverflow,
    PublicOverflow,
    ValidationFailed,
)

PUBLIC = "public"
PRIVATE = "private"

PRIVATE_PAYLOAD_CAP = 64 * 1024


class ProtoStatus(Enum):
    PROPOSED = "Proposed"
    VETTED = "Vetted"
    COMMITTED = "Committed"


@dataclass(frozen=True)
class FieldRule:
    """One field of a contract schema with its validation constraints."""

    name: str
    kind: str  # "int" or "str"
    min_value: Optional[int] = None
    max_value: Optional[int] = None
    min_length: int = 0
    max_length: Optional[int] = None
    choices: Optional[tuple] = None

    def check(self, value) -> Optional[str]:
        """Return a violation description, or None if the value passes."""
        if self.kind == "int":
            if not isinstance(value, int) or isinstance(value, bool):
                return f"{self.name}: expected int"
            if self.min_value is not None and value < self.min_value:
                return f"{self.name}: {value} below minimum {self.min_value}"
            if self.max_value is not None and value > self.max_value:
                return f"{self.name}: {value} above maximum {self.max_value}"
        else:
            if not isinstance(value, str):
                return f"{self.name}: expected str"
            if len(value) < self.min_length:
                return f"{self.name}: shorter than {self.min_length}"
            if self.max_length is not None and len(value) > self.max_length:
                return f"{self.name}: longer than {self.max_length}"
        if self.choices is not None and value not in self.choices:
            return f"{self.name}: {value!r} not among allowed choices"
        return None


@dataclass(frozen=True)
class TransactionContractPrototype:
    tc_id: int
    owner: bytes
    fields: tuple[FieldRule, ...]
    privacy: Mapping[str, str]
    definition_hash: bytes
    status: ProtoStatus = ProtoStatus.PROPOSED

    def visibility(self, name: str) -> str:
        return self.privacy.get(name, PUBLIC)

    def with_status(self, status: ProtoStatus) -> "TransactionContractPrototype":
        return replace(self, status=status)


def _rule_dict(rule: FieldRule) -> dict:
    return {
        "name": rule.name,
        "kind": rule.kind,
        "min_value": rule.min_value,
        "max_value": rule.max_value,
        "min_length": rule.min_length,
        "max_length": rule.max_length,
        "choices": list(rule.choices) if rule.choices is not None else None,
    }


def definition_digest(owner: bytes, fields: Sequence[FieldRule], privacy: Mapping[str, str]) -> bytes:
    """Deterministic digest over the prototype definition."""
    doc = {
        "owner": owner.hex(),
        "fields": [_rule_dict(r) for r in sorted(fields, key=lambda r: r.name)],
        "privacy": {k: privacy[k] for k in sorted(privacy)},
    }
    return hashlib.sha256(
        json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    ).digest()


def define_prototype(
    owner: bytes,
    fields: Sequence[FieldRule],
    privacy: Mapping[str, str],
    tc_id: int,
) -> TransactionContractPrototype:
    """Build a Proposed prototype after checking the rules are well formed."""
    names = [r.name for r in fields]
    if len(set(names)) != len(names):
        raise MalformedRule("duplicate field names in schema")
    if not fields:
        raise MalformedRule("schema must declare at least one field")
    for rule in fields:
        if rule.kind not in ("int", "str"):
            raise MalformedRule(f"{rule.name}: unknown kind {rule.kind!r}")
        if rule.kind == "int" and None not in (rule.min_value, rule.max_value):
            if rule.min_value > rule.max_value:
                raise MalformedRule(f"{rule.name}: empty integer range")
        if rule.kind == "str" and rule.max_length is not None:
            if rule.min_length > rule.max_length:
                raise MalformedRule(f"{rule.name}: empty length range")
    known = set(names)
    for name, vis in privacy.items():
        if name not in known:
            raise MalformedRule(f"privacy rule names unknown field {name!r}")
        if vis not in (PUBLIC, PRIVATE):
            raise MalformedRule(f"{name}: visibility must be public or private")
    return TransactionContractPrototype(
        tc_id=tc_id,
        owner=owner,
        fields=tuple(fields),
        privacy=dict(privacy),
        definition_hash=definition_digest(owner, fields, privacy),
    )


def validate_record(proto: TransactionContractPrototype, record: Mapping) -> None:
    """Raise ValidationFailed unless the record satisfies every field rule."""
    schema = {r.name: r for r in proto.fields}
    unknown = set(record) - set(schema)
    if unknown:
        raise ValidationFailed(f"unknown fields: {sorted(unknown)}")
    for name, rule in schema.items():
        if name not in record:
            raise ValidationFailed(f"missing field {name!r}")
        problem = rule.check(record[name])
        if problem is not None:
            raise ValidationFailed(problem)


def encode_fields(record: Mapping, names: Sequence[str]) -> bytes:
    """Canonical JSON encoding of the named subset of a record."""
    return json.dumps(
        {name: record[name] for name in sorted(names)},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()


def split_record(proto: TransactionContractPrototype, record: Mapping) -> tuple[bytes, bytes]:
    """Partition a validated record into (public, private) encodings."""
    public_names = [r.name for r in proto.fields if proto.visibility(r.name) == PUBLIC]
    private_names = [r.name for r in proto.fields if proto.visibility(r.name) == PRIVATE]
    return encode_fields(record, public_names), encode_fields(record, private_names)


@dataclass
class LicenseAccount:
    """Remaining execution rights one ledger holds for one contract."""

    ledger_id: bytes
    tc_id: int
    balance: int = 0
    ranges: list[list[int]] = field(default_factory=list)  # [next, end) serial spans

    @property
    def next_serial(self) -> Optional[int]:
        return self.ranges[0][0] if self.ranges else None

    def take_serial(self) -> int:
        if self.balance < 1 or not self.ranges:
            raise LicenseExhausted(
                f"ledger {self.ledger_id.hex()} has no licenses left for tc {self.tc_id}"
            )
        span = self.ranges[0]
        serial = span[0]
        span[0] += 1
        if span[0] >= span[1]:
            self.ranges.pop(0)
        self.balance -= 1
        return serial


@dataclass(frozen=True)
class PurchaseRecord:
    buyer: bytes
    tc_id: int
    first_serial: int
    count: int
    at: int


class LicenseBook:
    """Per-contract serial allocator plus the accounts holding balances."""

    def __init__(self) -> None:
        self.accounts: dict[tuple[bytes, int], LicenseAccount] = {}
        self.issued: dict[int, int] = {}
        self.audit: list[PurchaseRecord] = []

    def account(self, buyer: bytes, tc_id: int) -> LicenseAccount:
        key = (buyer, tc_id)
        if key not in self.accounts:
            self.accounts[key] = LicenseAccount(ledger_id=buyer, tc_id=tc_id)
        return self.accounts[key]

    def purchase(
        self,
        buyer: bytes,
        proto: TransactionContractPrototype,
        n: int,
        now: int = 0,
    ) -> LicenseAccount:
        """Buy n execution rights from the contract owner's serial pool."""
        if proto.status is not ProtoStatus.COMMITTED:
            raise NotCommitted(f"tc {proto.tc_id} is {proto.status.value}, not Committed")
        if n < 1:
            raise ValueError("must purchase at least one license")
        start = self.issued.get(proto.tc_id, 0)
        self.issued[proto.tc_id] = start + n
        account = self.account(buyer, proto.tc_id)
        if account.ranges and account.ranges[-1][1] == start:
            account.ranges[-1][1] = start + n
        else:
            account.ranges.append([start, start + n])
        account.balance += n
        self.audit.append(PurchaseRecord(buyer, proto.tc_id, start, n, now))
        return account

    def purchased_total(self, buyer: bytes, tc_id: int) -> int:
        return sum(r.count for r in self.audit if r.buyer == buyer and r.tc_id == tc_id)


@dataclass(frozen=True)
class ExecutionResult:
    public_payload: bytes
    private_payload: bytes
    payload_hash: bytes
    serial: int


def execute_contract(
    proto: TransactionContractPrototype,
    record: Mapping,
    account: LicenseAccount,
    *,
    public_cap: int = 208,
) -> ExecutionResult:
    """Validate, split by privacy, and spend one license serial.

    Validation and size checks precede the spend: a failed execution leaves
    the account balance untouched.
    """
    if proto.status is not ProtoStatus.COMMITTED:
        raise NotCommitted(f"tc {proto.tc_id} is {proto.status.value}, not Committed")
    if account.tc_id != proto.tc_id:
        raise ValueError("license account belongs to a different contract")
    validate_record(proto, record)
    public_payload, private_payload = split_record(proto, record)
    if len(public_payload) > public_cap:
        raise PublicOverflow(
            f"public part is {len(public_payload)} bytes, cap is {public_cap}"
        )
    if len(private_payload) > PRIVATE_PAYLOAD_CAP:
        raise PrivateOverflow(
            f"private part is {len(private_payload)} bytes, cap is {PRIVATE_PAYLOAD_CAP}"
        )
    if account.balance < 1:
        raise LicenseExhausted(
            f"ledger {account.ledger_id.hex()} has no licenses left for tc {proto.tc_id}"
        )
    serial = account.take_serial()
    payload_hash = hashlib.sha256(public_payload + private_payload).digest()
    return ExecutionResult(
        public_payload=public_payload,
        private_payload=private_payload,
        payload_hash=payload_hash,
        serial=serial,
    )


class OffChainStore:
    """Private content held off-chain, addressable by full payload hash."""

    def __init__(self) -> None:
        self._items: dict[bytes, bytes] = {}
        self.total_bytes = 0

    def put(self, payload_hash: bytes, private_payload: bytes) -> None:
        existing = self._items.get(payload_hash)
        if existing is not None:
            if existing != private_payload:
                raise ValueError("conflicting content for payload hash")
            return
        self._items[payload_hash] = private_payload
        self.total_bytes += len(private_payload)

    def get(self, payload_hash: bytes) -> bytes:
        return self._items[payload_hash]

    def __contains__(self, payload_hash: bytes) -> bool:
        return payload_hash in self._items

    def __len__(self) -> int:
        return len(self._items)

    def verify(self, public_payload: bytes, payload_hash: bytes) -> bool:
        """Recombine public content with stored private content and re-hash."""
        private = self._items.get(payload_hash)
        if private is None:
            return False
        return hashlib.sha256(public_payload + private).digest() == payload_hash
