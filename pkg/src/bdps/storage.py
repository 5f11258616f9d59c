"""Append-only write-log storage engine with snapshots and replica placement.

One engine owns one log. Entries are framed on disk as
``{seq:u64, kind:u8, len:u32, payload, crc:u32}`` little-endian, where the
payload region is the 13-byte ASCII record key followed by the serialized
delta, and ``crc`` is the CRC-32 of that whole region. The format is
bit-exact: identical entries encode to identical bytes on every platform.

Snapshots are a header ``{magic "BDPS", version:u16, upto_seq:u64,
state_hash:u64}`` followed by the canonical JSON blob of the materialized
state. Replaying the log up to ``upto_seq`` onto an empty state always
reproduces ``state_hash``.

``hash64`` is the package's fixed non-cryptographic 64-bit hash: FNV-1a 64
(offset 0xcbf29ce484222325, prime 0x100000001b3) finalized with the
splitmix64 mixing step. Bit-exact test vectors ship in the test suite.
Replica placement uses rendezvous (highest-random-weight) hashing over it.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Iterator

from .errors import BdpsError

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

KEY_WIDTH = 13

_FRAME_HEADER = struct.Struct("<QBI")  # seq, kind, payload-region length
_FRAME_CRC = struct.Struct("<I")

SNAP_MAGIC = b"BDPS"
SNAP_VERSION = 1
_SNAP_HEADER = struct.Struct("<4sHQQ")  # magic, version, upto_seq, state_hash

#: hash64 of the canonical serialization of an empty state ("{}").
EMPTY_STATE_HASH = 0x968AFF560C30F3E2


class StorageFull(BdpsError):
    pass


class ChecksumError(BdpsError):
    """Raised when a stored frame or snapshot fails its integrity check."""


class SeqOutOfRange(BdpsError):
    pass


class NoNodes(BdpsError):
    pass


class ReplayError(BdpsError):
    """An entry cannot be applied to the state it was replayed onto."""


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _mix64(x: int) -> int:
    z = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def hash64(data: bytes) -> int:
    """Fixed 64-bit hash: FNV-1a 64 with splitmix64 finalization."""
    return _mix64(fnv1a64(data))


class OpKind(IntEnum):
    INSERT = 1
    INSERT_LINKED = 2
    UPDATE = 3
    ARCHIVE = 4


@dataclass(frozen=True)
class LogEntry:
    seq: int
    nid_key: str
    op_kind: OpKind
    payload: bytes
    checksum: int

    def payload_dict(self) -> dict:
        return json.loads(self.payload.decode("utf-8"))


def make_entry(seq: int, nid_key: str, op_kind: OpKind, payload: bytes) -> LogEntry:
    key_bytes = _key_bytes(nid_key)
    crc = zlib.crc32(key_bytes + payload) & 0xFFFFFFFF
    return LogEntry(seq, nid_key, OpKind(op_kind), payload, crc)


def _key_bytes(nid_key: str) -> bytes:
    raw = nid_key.encode("ascii")
    if len(raw) != KEY_WIDTH:
        raise ValueError(f"record key must be exactly {KEY_WIDTH} ASCII bytes, got {nid_key!r}")
    return raw


def encode_frame(entry: LogEntry) -> bytes:
    region = _key_bytes(entry.nid_key) + entry.payload
    return (
        _FRAME_HEADER.pack(entry.seq, int(entry.op_kind), len(region))
        + region
        + _FRAME_CRC.pack(entry.checksum)
    )


def decode_frame(buf: bytes, offset: int = 0) -> tuple[LogEntry, int]:
    """Decode one frame at ``offset``; returns (entry, next_offset).

    Raises IncompleteFrame if the buffer ends mid-frame and ChecksumError if
    a complete frame fails CRC verification.
    """
    end = offset + _FRAME_HEADER.size
    if end > len(buf):
        raise IncompleteFrame(offset)
    seq, kind, length = _FRAME_HEADER.unpack_from(buf, offset)
    region_end = end + length
    crc_end = region_end + _FRAME_CRC.size
    if crc_end > len(buf):
        raise IncompleteFrame(offset)
    region = buf[end:region_end]
    (crc,) = _FRAME_CRC.unpack_from(buf, region_end)
    if zlib.crc32(region) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"frame at byte {offset} (seq {seq}) fails CRC verification")
    if length < KEY_WIDTH:
        raise ChecksumError(f"frame at byte {offset} has no room for a record key")
    try:
        kind = OpKind(kind)
    except ValueError:
        raise ChecksumError(f"frame at byte {offset} has unknown op kind {kind}") from None
    key = region[:KEY_WIDTH].decode("ascii")
    return LogEntry(seq, key, kind, bytes(region[KEY_WIDTH:]), crc), crc_end


class IncompleteFrame(BdpsError):
    """A frame was cut short; only legitimate as a torn tail after a crash."""

    def __init__(self, offset: int):
        super().__init__(f"incomplete frame at byte {offset}")
        self.offset = offset


class LogStore:
    """Single-writer append-only log, optionally backed by a file.

    With a path, every acknowledged append is flushed (and fsynced when
    ``sync=True``) before ``append`` returns. Re-opening the path recovers
    all acknowledged entries; a torn tail frame left by a crash is trimmed,
    while a corrupt complete frame raises :class:`ChecksumError`.
    """

    def __init__(self, path: str | Path | None = None, *, sync: bool = True, max_bytes: int | None = None):
        self.path = Path(path) if path is not None else None
        self.sync = sync
        self.max_bytes = max_bytes
        self.entries: list[LogEntry] = []
        self._bytes = 0
        self._fh = None
        if self.path is not None:
            if self.path.exists():
                self._recover()
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "ab")

    @property
    def max_seq(self) -> int:
        return self.entries[-1].seq if self.entries else 0

    def _recover(self) -> None:
        buf = self.path.read_bytes()
        offset = 0
        expected_seq = 1
        while offset < len(buf):
            try:
                entry, next_offset = decode_frame(buf, offset)
            except IncompleteFrame:
                # torn tail from an interrupted write: drop it
                with open(self.path, "r+b") as fh:
                    fh.truncate(offset)
                break
            if entry.seq != expected_seq:
                raise ChecksumError(
                    f"log sequence gap: expected seq {expected_seq}, found {entry.seq}"
                )
            self.entries.append(entry)
            expected_seq += 1
            offset = next_offset
        self._bytes = offset if offset <= len(buf) else len(buf)

    def append(self, nid_key: str, op_kind: OpKind, payload: bytes) -> LogEntry:
        entry = make_entry(self.max_seq + 1, nid_key, op_kind, payload)
        self._write(entry)
        return entry

    def append_existing(self, entry: LogEntry) -> None:
        """Apply a replicated entry verbatim, preserving its sequence number."""
        if entry.seq != self.max_seq + 1:
            raise SeqOutOfRange(f"cannot append seq {entry.seq} after {self.max_seq}")
        expected = make_entry(entry.seq, entry.nid_key, entry.op_kind, entry.payload)
        if expected.checksum != entry.checksum:
            raise ChecksumError(f"replicated entry seq {entry.seq} fails CRC verification")
        self._write(entry)

    def _write(self, entry: LogEntry) -> None:
        frame = encode_frame(entry)
        if self.max_bytes is not None and self._bytes + len(frame) > self.max_bytes:
            raise StorageFull(f"log would exceed {self.max_bytes} bytes")
        if self._fh is not None:
            self._fh.write(frame)
            self._fh.flush()
            if self.sync:
                os.fsync(self._fh.fileno())
        self.entries.append(entry)
        self._bytes += len(frame)

    def read(self, seq: int) -> LogEntry:
        if seq < 1 or seq > self.max_seq:
            raise SeqOutOfRange(f"seq {seq} outside 1..{self.max_seq}")
        return self.entries[seq - 1]

    def batch_after(self, from_seq: int, limit: int) -> list[LogEntry]:
        """Contiguous entries with from_seq < seq <= from_seq + limit."""
        if from_seq >= self.max_seq:
            return []
        return self.entries[from_seq : from_seq + limit]

    def iter_from(self, seq: int) -> Iterator[LogEntry]:
        return iter(self.entries[max(seq - 1, 0) :])

    def truncate_to(self, seq: int) -> None:
        """Discard every entry with a sequence number above ``seq``."""
        if seq < 0 or seq > self.max_seq:
            raise SeqOutOfRange(f"cannot truncate to seq {seq} (max {self.max_seq})")
        self.entries = self.entries[:seq]
        if self.path is not None:
            if self._fh is not None:
                self._fh.close()
            with open(self.path, "wb") as fh:
                for entry in self.entries:
                    fh.write(encode_frame(entry))
                fh.flush()
                os.fsync(fh.fileno())
            self._fh = open(self.path, "ab")
        self._bytes = sum(len(encode_frame(e)) for e in self.entries)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# --- materialized state ----------------------------------------------------
#
# The state is a JSON-shaped map: key -> {"live": record-or-null,
# "archived": [record, ...]} where a record is {"fields": {...},
# "linked": {table: [row, ...]}, "version": int}. Versions keep rising
# across archive and re-registration so per-key versions never repeat.


def new_record(fields: dict) -> dict:
    return {"fields": dict(fields), "linked": {}, "version": 1}


def apply_entry(state: dict, entry: LogEntry) -> None:
    """Reduce one log entry into the state map, mutating it in place."""
    payload = entry.payload_dict()
    key = entry.nid_key
    slot = state.get(key)
    if entry.op_kind is OpKind.INSERT:
        if slot is None:
            slot = state[key] = {"live": None, "archived": []}
        if slot["live"] is not None:
            raise ReplayError(f"insert onto live key {key} at seq {entry.seq}")
        prior = slot["archived"][-1]["version"] if slot["archived"] else 0
        record = new_record(payload["fields"])
        record["version"] = prior + 1
        slot["live"] = record
        return
    if slot is None or slot["live"] is None:
        raise ReplayError(f"{entry.op_kind.name} on absent key {key} at seq {entry.seq}")
    live = slot["live"]
    if entry.op_kind is OpKind.INSERT_LINKED:
        live["linked"].setdefault(payload["table"], []).append(payload["row"])
    elif entry.op_kind is OpKind.UPDATE:
        live["fields"].update(payload["deltas"])
        live["version"] += 1
    elif entry.op_kind is OpKind.ARCHIVE:
        live["fields"]["Death_date"] = payload["death_date"]
        live["version"] += 1
        slot["archived"].append(live)
        slot["live"] = None
    else:  # pragma: no cover - OpKind is closed
        raise ReplayError(f"unknown op kind {entry.op_kind}")


def replay(entries: Iterable[LogEntry], state: dict | None = None) -> dict:
    state = {} if state is None else state
    for entry in entries:
        apply_entry(state, entry)
    return state


def canonical_state_bytes(state: dict) -> bytes:
    return json.dumps(state, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def state_hash(state: dict) -> int:
    """Order-independent digest: hash64 of the sorted-key canonical form."""
    return hash64(canonical_state_bytes(state))


def state_from_blob(blob: bytes) -> dict:
    return json.loads(blob.decode("utf-8"))


@dataclass(frozen=True)
class Snapshot:
    upto_seq: int
    state_hash: int
    blob: bytes


def materialize(log: LogStore, upto_seq: int | None = None) -> Snapshot:
    """Deterministically fold the log (up to ``upto_seq``) into a snapshot."""
    upto = log.max_seq if upto_seq is None else upto_seq
    if upto < 0 or upto > log.max_seq:
        raise SeqOutOfRange(f"upto_seq {upto} outside 0..{log.max_seq}")
    state = replay(log.entries[:upto])
    blob = canonical_state_bytes(state)
    return Snapshot(upto, hash64(blob), blob)


def save_snapshot(snap: Snapshot, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(_SNAP_HEADER.pack(SNAP_MAGIC, SNAP_VERSION, snap.upto_seq, snap.state_hash))
        fh.write(snap.blob)
        fh.flush()
        os.fsync(fh.fileno())


def load_snapshot(path: str | Path) -> Snapshot:
    raw = Path(path).read_bytes()
    if len(raw) < _SNAP_HEADER.size:
        raise ChecksumError("snapshot file shorter than its header")
    magic, version, upto_seq, digest = _SNAP_HEADER.unpack_from(raw, 0)
    if magic != SNAP_MAGIC:
        raise ChecksumError(f"bad snapshot magic {magic!r}")
    if version != SNAP_VERSION:
        raise ChecksumError(f"unsupported snapshot version {version}")
    blob = raw[_SNAP_HEADER.size :]
    if hash64(blob) != digest:
        raise ChecksumError("snapshot blob does not match its recorded state hash")
    return Snapshot(upto_seq, digest, blob)


# --- replica placement ------------------------------------------------------

REPLICATION_FACTOR = 3


@dataclass(frozen=True)
class ReplicaPlacement:
    nid_key: str
    replicas: tuple[str, ...]


def place_replicas(nid_key: str, live_nodes: Iterable[str], r: int = REPLICATION_FACTOR) -> ReplicaPlacement:
    """Pick min(r, live) distinct nodes by highest-random-weight hashing.

    score(node) = hash64(nid_key + node_id); the top-r scores win, ties
    resolved toward the lower node id. Deterministic in (key, node set).
    """
    nodes = sorted(set(live_nodes))
    if not nodes:
        raise NoNodes("replica placement requires at least one live node")
    ranked = sorted(nodes, key=lambda n: (-hash64((nid_key + n).encode("utf-8")), n))
    return ReplicaPlacement(nid_key, tuple(ranked[: min(r, len(ranked))]))
