"""The disaster-day plot, told with the replication primitives directly.

A primary site ships its log to a remote mirror in batches. The primary
dies mid-stream, the mirror is promoted, and whatever never shipped is
the exact, countable loss. When the primary comes back it must resync
before it may lead again.
"""

from bdps.registry import CitizenRecord, NoSuchCitizen, Registry
from bdps.replication import ReplicationLink, RoleError
from bdps.storage import LogStore

local = Registry(LogStore())
remote = Registry(LogStore())
link = ReplicationLink(local.log, remote.log,
                       on_remote_apply=remote.apply_replicated)

for i in range(8):
    local.insert_citizen(CitizenRecord(national_id=f"{3_000_000_000_000 + i:013d}",
                                       name=f"early-{i}"))
moved = link.transmit(max_batch=64)
print(f"quiet morning: 8 registrations, {moved} shipped and acknowledged")

for i in range(8, 11):
    local.insert_citizen(CitizenRecord(national_id=f"{3_000_000_000_000 + i:013d}",
                                       name=f"late-{i}"))
print(f"then three more arrive... and the data center floods. lag={link.lag()}")

mirror = link.promote_remote(reason="operator drill")
doomed = [e.nid_key for e in link.lost_entries()]
print(f"mirror promoted at epoch {mirror.epoch}; the unshipped suffix is the")
print(f"whole loss, exactly {len(doomed)} writes: {doomed}")

remote.insert_citizen(CitizenRecord(national_id="3000000000099",
                                    name="registered-at-backup"))
print("life goes on at the backup site; new registrations land there")

try:
    link.ship_batch(max_batch=64)
except RoleError as err:
    print("the old primary wakes up, tries to ship its stale tail:", err)

try:
    remote.verify_fields("3000000000008", {"Name": "late-8"})
except NoSuchCitizen:
    print("a lost registration is simply absent at the backup, not corrupted")

before = local.log.max_seq
mirror = link.resync_local()
local.reload()
print(f"recovery: local log went {before} -> {local.log.max_seq} entries "
      f"(drops the {len(doomed)} dead writes, replays the backup-era one),")
print(f"and local leads again at epoch {mirror.epoch}")
print("state hashes equal after resync:",
      local.current_state_hash() == remote.current_state_hash())
