"""Local-to-remote log mirroring, failover promotion and resynchronization.

The local site owns the write log; a shipping loop sends contiguous frame
batches to the remote site, which applies them in order and acknowledges.
Mirroring is asynchronous by default: the client ack does not wait for the
remote. With ``semi_sync`` the caller is expected to drive one transmit
round before acknowledging, which bounds the loss window to zero for
acknowledged writes.

When the local site fails, the remote is promoted: it serves from its
applied state and accepts new writes under a fresh epoch. Writes the local
site acknowledged but never shipped are lost at that moment; the loss set
is exactly the local log suffix past ``applied_seq``, nothing more. On
recovery the local site discards that divergent suffix, replays what the
remote accepted during the outage, and takes back the primary role.

Epochs are carried in the batch wire header and in ``MirrorState``, not in
stored frames: a batch from a fenced pre-failover primary is recognizable
by its stale epoch and rejected.
"""

from __future__ import annotations

import struct
import threading
from dataclasses import dataclass, field
from enum import Enum

from .errors import BdpsError
from .storage import (
    LogEntry,
    LogStore,
    decode_frame,
    encode_frame,
    materialize,
)


class GapError(BdpsError):
    pass


class AlreadyPromoted(BdpsError):
    pass


class NotPromoted(BdpsError):
    pass


class RoleError(BdpsError):
    pass


class EpochError(BdpsError):
    pass


class HashMismatch(BdpsError):
    pass


class MirrorRole(str, Enum):
    LOCAL_PRIMARY = "LocalPrimary"
    REMOTE_PROMOTED = "RemotePromoted"


@dataclass
class MirrorState:
    """Progress counters for one local->remote link.

    Invariant: applied_seq <= acked_seq <= shipped_seq <= local max seq,
    and the epoch only ever grows.
    """

    shipped_seq: int = 0
    acked_seq: int = 0
    applied_seq: int = 0
    role: MirrorRole = MirrorRole.LOCAL_PRIMARY
    epoch: int = 1


_BATCH_HEADER = struct.Struct("<II")  # epoch, frame count


def encode_batch(epoch: int, entries: list[LogEntry]) -> bytes:
    return _BATCH_HEADER.pack(epoch, len(entries)) + b"".join(
        encode_frame(e) for e in entries)


def decode_batch(buf: bytes) -> tuple[int, list[LogEntry]]:
    epoch, count = _BATCH_HEADER.unpack_from(buf, 0)
    entries = []
    offset = _BATCH_HEADER.size
    for _ in range(count):
        entry, offset = decode_frame(buf, offset)
        entries.append(entry)
    return epoch, entries


def send_batch(sock, epoch: int, entries: list[LogEntry]) -> None:
    """Write one length-delimited batch to a connected stream socket."""
    payload = encode_batch(epoch, entries)
    sock.sendall(struct.pack("<I", len(payload)) + payload)


def _recv_exact(sock, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def recv_batch(sock) -> tuple[int, list[LogEntry]] | None:
    """Read one batch; None on clean EOF."""
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (length,) = struct.unpack("<I", head)
    payload = _recv_exact(sock, length)
    if payload is None:
        return None
    return decode_batch(payload)


class ReplicationLink:
    """Coordinates one local log and its remote mirror.

    ``on_remote_apply`` is called once per entry newly applied at the
    remote, so a registry there can keep live state. All control actions
    are serialized; the data plane holds the same lock, so a role flip
    cannot interleave with a ship or apply.
    """

    def __init__(self, local: LogStore, remote: LogStore, *,
                 on_remote_apply=None, semi_sync: bool = False):
        self.local = local
        self.remote = remote
        self.on_remote_apply = on_remote_apply
        self.semi_sync = semi_sync
        self.mirror = MirrorState(applied_seq=remote.max_seq,
                                  acked_seq=remote.max_seq,
                                  shipped_seq=max(remote.max_seq, 0))
        self._fence_seq = 0  # local seq at the moment of promotion
        self.promote_reason: str | None = None
        self._lock = threading.RLock()

    # -- shipping path -----------------------------------------------------

    def ship_batch(self, from_seq: int | None = None, max_batch: int = 64) -> list[LogEntry]:
        """Next contiguous slice of unacknowledged entries, oldest first.

        Re-shipping after a lost ack yields byte-identical frames because
        the log is immutable. Empty when caught up.
        """
        with self._lock:
            if self.mirror.role is not MirrorRole.LOCAL_PRIMARY:
                raise RoleError("shipping is fenced while the remote is promoted")
            start = self.mirror.acked_seq if from_seq is None else from_seq
            batch = self.local.batch_after(start, max_batch)
            if batch:
                self.mirror.shipped_seq = max(self.mirror.shipped_seq, batch[-1].seq)
            return batch

    def apply_batch(self, entries: list[LogEntry], *, epoch: int | None = None) -> int:
        """Apply a shipped batch at the remote; returns the new acked seq.

        Idempotent over already-applied prefixes; a batch that would skip
        sequence numbers is rejected outright (nothing from it applies).
        """
        with self._lock:
            if epoch is not None and epoch != self.mirror.epoch:
                raise EpochError(
                    f"batch epoch {epoch} does not match current epoch {self.mirror.epoch}")
            applied = self.mirror.applied_seq
            fresh = [e for e in entries if e.seq > applied]
            if fresh and fresh[0].seq != applied + 1:
                raise GapError(
                    f"batch starts at seq {fresh[0].seq}, remote applied up to {applied}")
            for entry in fresh:
                self.remote.append_existing(entry)
                if self.on_remote_apply is not None:
                    self.on_remote_apply(entry)
                self.mirror.applied_seq = entry.seq
            self.mirror.acked_seq = self.mirror.applied_seq
            self.mirror.shipped_seq = max(self.mirror.shipped_seq, self.mirror.acked_seq)
            return self.mirror.acked_seq

    def transmit(self, max_batch: int = 64) -> int:
        """One ship+apply+ack round; returns how many entries moved."""
        batch = self.ship_batch(max_batch=max_batch)
        if batch:
            self.apply_batch(batch, epoch=self.mirror.epoch)
        return len(batch)

    def lag(self) -> int:
        """Entries the remote has not acknowledged yet."""
        with self._lock:
            return self.local.max_seq - self.mirror.acked_seq

    # -- failover ----------------------------------------------------------

    def lost_entries(self) -> list[LogEntry]:
        """Local suffix that did not survive promotion (empty before one)."""
        with self._lock:
            return [e for e in self.local.entries if e.seq > self._fence_seq] \
                if self.mirror.role is MirrorRole.REMOTE_PROMOTED else []

    def promote_remote(self, reason: str = "LocalFailure") -> MirrorState:
        """Flip the remote to primary; the loss window is every local entry
        past applied_seq. The old primary is fenced by the epoch bump."""
        with self._lock:
            if self.mirror.role is MirrorRole.REMOTE_PROMOTED:
                raise AlreadyPromoted(f"already promoted (epoch {self.mirror.epoch})")
            self._fence_seq = self.mirror.applied_seq
            self.mirror.role = MirrorRole.REMOTE_PROMOTED
            self.mirror.epoch += 1
            self.promote_reason = reason
            return self.mirror

    def resync_local(self, remote: LogStore | None = None) -> MirrorState:
        """Bring the recovered local site back to primary.

        The local suffix past the fence point is discarded (those writes
        were lost at failover; resurrecting them would fork history), then
        the remote's outage-era entries are replayed. Ends with a full
        state-hash comparison: inequality means divergent logs and is a
        hard error, not a retry case.
        """
        with self._lock:
            if self.mirror.role is not MirrorRole.REMOTE_PROMOTED:
                raise NotPromoted("resync only applies after a promotion")
            source = self.remote if remote is None else remote
            self.local.truncate_to(self._fence_seq)
            for entry in source.iter_from(self._fence_seq + 1):
                self.local.append_existing(entry)
            local_snap = materialize(self.local)
            remote_snap = materialize(source)
            if local_snap.state_hash != remote_snap.state_hash:
                raise HashMismatch(
                    f"local state {local_snap.state_hash:#018x} != "
                    f"remote state {remote_snap.state_hash:#018x} after resync")
            top = source.max_seq
            self.mirror.shipped_seq = top
            self.mirror.acked_seq = top
            self.mirror.applied_seq = top
            self.mirror.role = MirrorRole.LOCAL_PRIMARY
            self.mirror.epoch += 1
            return self.mirror
