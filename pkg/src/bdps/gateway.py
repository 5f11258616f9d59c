"""Front door: authentication, request routing, and pay-per-use metering.

Three principal kinds exist. Citizens sign in with their national id and a
password and may look at their own record or verify someone else's claims
(free of charge). Corporate callers hold an API key and pay per operation.
The data-entry authority registers, updates and archives records and may
drive admin actions. Secrets are stored salted-and-hashed only; every
authentication failure raises the same error regardless of cause, so an
outsider cannot probe which ids exist.

Routing prefers the least-loaded local worker, spills to the remote site
when the local queue is past the overflow cap, and fails over entirely when
the failure detector has declared the local cluster down. Rejection is a
value, not an exception: it only happens when both sites are unavailable.

Usage metering is an append-only ledger; invoices are exact sums over a
half-open [from, to) time window, indexed per key so invoicing does not
rescan the whole history.
"""

from __future__ import annotations

import hashlib
import hmac
import itertools
import os
import threading
from dataclasses import dataclass
from enum import Enum

from .errors import BdpsError
from .registry import AuthFailure, Role


class UnknownOpKind(BdpsError):
    def __init__(self, op_kind: str):
        super().__init__(f"no such operation kind {op_kind!r}")
        self.op_kind = op_kind


#: Fee schedule in billing units. Corporate keys pay these; citizen and
#: data-entry principals are never charged (their entries carry fee 0).
DEFAULT_FEES = {
    "verify": 2,
    "bulk_verify": 1,  # per record
    "registration": 10,
    "update": 5,
    "owner_lookup": 0,
    "insert_linked": 5,
    "archive": 0,
    "invoice": 0,
    "admin": 0,
}

#: Which operations each role may invoke. Checked on every request.
ROLE_OPS = {
    Role.CITIZEN: frozenset({"verify", "owner_lookup"}),
    Role.CORPORATE: frozenset({"verify", "bulk_verify", "invoice"}),
    Role.DATA_ENTRY: frozenset({"registration", "update", "insert_linked",
                                "archive", "admin"}),
}

TOKEN_TTL = 3600.0  # seconds

_DUMMY_SALT = bytes(16)
_DUMMY_DIGEST = hashlib.sha256(_DUMMY_SALT).digest()


def _digest(salt: bytes, secret: str) -> bytes:
    return hashlib.sha256(salt + secret.encode("utf-8")).digest()


class CredentialStore:
    """Salted-hash credential records keyed by (kind, principal id)."""

    def __init__(self):
        self._records: dict[tuple[str, str], tuple[bytes, bytes, Role]] = {}

    def _add(self, kind: str, principal_id: str, secret: str, role: Role) -> dict:
        salt = os.urandom(16)
        digest = _digest(salt, secret)
        self._records[(kind, principal_id)] = (salt, digest, role)
        return {"kind": kind, "principal_id": principal_id,
                "salt": salt.hex(), "digest": digest.hex()}

    def add_citizen(self, nid: str, password: str) -> dict:
        return self._add("citizen", nid, password, Role.CITIZEN)

    def add_corporate(self, api_key_id: str, secret: str) -> dict:
        return self._add("corporate", api_key_id, secret, Role.CORPORATE)

    def add_data_entry(self, operator_id: str, secret: str) -> dict:
        return self._add("data_entry", operator_id, secret, Role.DATA_ENTRY)

    def import_row(self, row: dict) -> None:
        """Restore a previously exported hashed row; later rows win."""
        role = {"citizen": Role.CITIZEN, "corporate": Role.CORPORATE,
                "data_entry": Role.DATA_ENTRY}[row["kind"]]
        self._records[(row["kind"], row["principal_id"])] = (
            bytes.fromhex(row["salt"]), bytes.fromhex(row["digest"]), role)

    def verify(self, kind: str, principal_id: str, secret: str) -> Role | None:
        """Role on success, None otherwise; unknown ids burn the same hash
        work as wrong passwords."""
        record = self._records.get((kind, principal_id))
        if record is None:
            hmac.compare_digest(_DUMMY_DIGEST, _digest(_DUMMY_SALT, secret))
            return None
        salt, digest, role = record
        return role if hmac.compare_digest(digest, _digest(salt, secret)) else None

    def verify_citizen(self, nid: str, password: str) -> bool:
        return self.verify("citizen", nid, password) is not None


@dataclass(frozen=True)
class Token:
    token_id: str
    role: Role
    subject: str
    expires_at: float


@dataclass(frozen=True)
class UsageEntry:
    api_key_id: str
    op_kind: str
    timestamp: float
    fee_units: int


@dataclass(frozen=True)
class Invoice:
    api_key_id: str
    total_units: int
    line_count: int


class UsageLedger:
    """Append-only usage record with a per-key index for invoicing."""

    def __init__(self):
        self._entries: list[UsageEntry] = []
        self._by_key: dict[str, list[UsageEntry]] = {}
        self._lock = threading.Lock()

    def record(self, api_key_id: str, op_kind: str, timestamp: float,
               fee_units: int) -> UsageEntry:
        entry = UsageEntry(api_key_id, op_kind, timestamp, fee_units)
        with self._lock:
            self._entries.append(entry)
            self._by_key.setdefault(api_key_id, []).append(entry)
        return entry

    def entries(self) -> tuple[UsageEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def invoice(self, api_key_id: str, from_t: float, to_t: float) -> Invoice:
        """Exact sum over the half-open window [from_t, to_t)."""
        with self._lock:
            rows = self._by_key.get(api_key_id, [])
            picked = [e for e in rows if from_t <= e.timestamp < to_t]
        return Invoice(api_key_id, sum(e.fee_units for e in picked), len(picked))


@dataclass(frozen=True)
class RouteDecision:
    target: str            # "local" | "remote" | "rejected"
    reason: str            # "Normal" | "Overflow" | "LocalDown"
    worker_id: int | None = None


def route(worker_loads: dict[int, int], overflow_queue_cap: int,
          local_up: bool, remote_up: bool) -> RouteDecision:
    """Pick a destination for one request.

    ``worker_loads`` maps routable local worker ids to their queue depths;
    crashed-but-undetected workers stay in the map (requests sent to them
    time out, which is what feeds the failure detector).
    """
    if local_up and worker_loads:
        if sum(worker_loads.values()) < overflow_queue_cap:
            worker = min(worker_loads, key=lambda w: (worker_loads[w], w))
            return RouteDecision("local", "Normal", worker)
        if remote_up:
            return RouteDecision("remote", "Overflow")
        return RouteDecision("rejected", "Overflow")
    if remote_up:
        return RouteDecision("remote", "LocalDown")
    return RouteDecision("rejected", "LocalDown")


class FailureDetector:
    """k-consecutive-outcome health detector with symmetric recovery.

    The cluster is marked down after ``k`` consecutive failures and up
    again after ``k`` consecutive successes. Both health probes and timed-
    out client requests count as failures; any completed request counts as
    a success. Worst-case detection latency with probing every ``timeout``
    seconds is k * timeout after the crash.
    """

    def __init__(self, k: int = 3, timeout: float = 0.5):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k
        self.timeout = timeout
        self.up = True
        self._fail_streak = 0
        self._ok_streak = 0
        self.transitions: list[tuple[float, bool]] = []

    def record_failure(self, now: float) -> bool:
        self._ok_streak = 0
        self._fail_streak += 1
        if self.up and self._fail_streak >= self.k:
            self.up = False
            self.transitions.append((now, False))
        return self.up

    def record_success(self, now: float) -> bool:
        self._fail_streak = 0
        self._ok_streak += 1
        if not self.up and self._ok_streak >= self.k:
            self.up = True
            self.transitions.append((now, True))
        return self.up


class Gateway:
    """Session, authorization and metering logic shared by the HTTP server
    and the simulation harness. Owns no registry state."""

    def __init__(self, credentials: CredentialStore | None = None,
                 fees: dict[str, int] | None = None,
                 token_ttl: float = TOKEN_TTL,
                 token_factory=None):
        self.credentials = credentials if credentials is not None else CredentialStore()
        self.fees = dict(DEFAULT_FEES if fees is None else fees)
        self.token_ttl = token_ttl
        self.ledger = UsageLedger()
        self._tokens: dict[str, Token] = {}
        self._counter = itertools.count(1)
        self._token_factory = token_factory or (lambda: os.urandom(16).hex())
        self._lock = threading.Lock()

    # -- sessions ----------------------------------------------------------

    def authenticate(self, kind: str, principal_id: str, secret: str,
                     now: float) -> Token:
        role = self.credentials.verify(kind, principal_id, secret)
        if role is None:
            raise AuthFailure()
        token = Token(self._token_factory(), role, principal_id, now + self.token_ttl)
        with self._lock:
            self._tokens[token.token_id] = token
        return token

    def validate(self, token_id: str, now: float) -> Token:
        with self._lock:
            token = self._tokens.get(token_id)
        if token is None or now >= token.expires_at:
            raise AuthFailure()
        return token

    def authorize(self, token_id: str, op_kind: str, now: float) -> Token:
        """Token check then role check; the failure shape never reveals
        which one tripped."""
        token = self.validate(token_id, now)
        if op_kind not in ROLE_OPS[token.role]:
            raise AuthFailure()
        return token

    # -- metering ----------------------------------------------------------

    def fee_for(self, role: Role, op_kind: str, count: int = 1) -> int:
        if op_kind not in self.fees:
            raise UnknownOpKind(op_kind)
        return self.fees[op_kind] * count if role is Role.CORPORATE else 0

    def record_usage(self, principal_id: str, op_kind: str, now: float,
                     role: Role, count: int = 1) -> UsageEntry:
        return self.ledger.record(principal_id, op_kind, now,
                                  self.fee_for(role, op_kind, count))

    def invoice(self, api_key_id: str, from_t: float, to_t: float) -> Invoice:
        return self.ledger.invoice(api_key_id, from_t, to_t)
