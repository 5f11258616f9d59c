"""One citizen's full journey: registration, linked records, an address
change, and finally archival after death.

Run it to watch the version counter climb and the record leave the live
table for the archive file.
"""

import tempfile
from pathlib import Path

from bdps.registry import (
    Actor,
    AlreadyArchived,
    CitizenRecord,
    Registry,
    Role,
    render_official_printout,
)
from bdps.storage import LogStore

archive = Path(tempfile.mkdtemp()) / "archive.jsonl"
registry = Registry(LogStore(), archive_path=archive)

NID = "5511883726140"
registry.insert_citizen(CitizenRecord(
    national_id=NID, name="ফারুক আহমেদ", english_name="Faruk Ahmed",
    phone="01612345678", occupation="Shopkeeper",
    present_address="Mirpur, Dhaka"))
print("registered Faruk Ahmed,", NID)

registry.insert_linked("education", {
    "National_ID": NID, "Degree_name": "SSC", "Year": "1998",
    "Result": "First division"})
registry.insert_linked("job_record", {
    "National_ID": NID, "Job_title": "Owner", "Institute": "Ahmed Stores",
    "Joining_date": "2005-03-01"})
print("linked one education row and one job row")

clerk = Actor(Role.DATA_ENTRY, "entry-7")
version = registry.update_citizen(NID, {"Present_address": "Pallabi, Dhaka"},
                                  clerk)
print(f"moved house; record version is now {version}")

view = registry.owner_view(NID)
print(f"owner view: version {view.version}, "
      f"{sum(len(v) for v in view.linked.values())} linked rows, "
      f"archived={view.archived}")

receipt = registry.archive_deceased(NID, "2026-01-15")
print(f"archived on death: seq {receipt.seq}, "
      f"{receipt.archive_entries} record(s) now in {archive.name}")

try:
    registry.archive_deceased(NID, "2026-01-16")
except AlreadyArchived as err:
    print("second archival refused:", err)

print()
print("the record is out of the live table but never gone; the official")
print("printout now carries the death date:")
print()
print(render_official_printout(registry.owner_view(NID)))
