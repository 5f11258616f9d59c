"""The people registry: five linked tables, verification, and archival.

The information table plus four linked tables (criminal, bank, education,
job) form the data model. The canonical 13-digit national ID string is the
sole join key; PIN and voter IDs are plain data fields. All mutations are
written through the append-only log and reduced into state with the same
reducer used for replay, so a registry rebuilt from its log is identical to
the one that wrote it.

Verification never discloses stored data: a claimant supplies field/value
claims and receives only Match / Mismatch / UnknownField per field. Values
are compared exactly, byte for byte, after trimming surrounding whitespace;
no case folding is applied (Bangla text makes it ill-defined). A field that
was never set matches the empty claim and mismatches every other.

Deceased citizens move, with all their linked rows, to an append-only
archive file; afterwards the ID no longer answers live queries.

All writes are serialized behind one lock (single-writer model); readers
receive plain copies, never views into shared mutable state.
"""

from __future__ import annotations

import base64
import hashlib
import json
import threading
from dataclasses import dataclass, field as dc_field
from datetime import date
from enum import Enum
from pathlib import Path

from .errors import BdpsError
from .nid import NidError, canonical_nid
from .storage import LogEntry, LogStore, OpKind, apply_entry, replay, state_hash


class DuplicateId(BdpsError):
    pass


class InvalidNid(BdpsError):
    pass


class OrphanRecord(BdpsError):
    pass


class ArchivedTarget(BdpsError):
    pass


class NoSuchCitizen(BdpsError):
    pass


class AlreadyArchived(BdpsError):
    pass


class AuthFailure(BdpsError):
    """Uniform authentication/authorization failure; shape never varies."""

    def __init__(self):
        super().__init__("authentication failed")


class UnknownField(BdpsError):
    def __init__(self, name: str):
        super().__init__(f"unknown field {name!r}")
        self.field = name


class ValidationError(BdpsError):
    pass


# --- schema ------------------------------------------------------------------
#
# Column names and ordering are the registry's external contract (ingestion
# headers, JSONL keys, printout labels). National_ID is the join key column;
# the historical "Merital_status" spelling is part of the schema.

INFORMATION_FIELDS: tuple[tuple[str, str], ...] = (
    ("did", "DID"),
    ("national_id", "National_ID"),
    ("pin_id", "PIN_ID"),
    ("voter_id", "Voter_ID"),
    ("name", "Name"),
    ("english_name", "English_name"),
    ("father_name", "Father_name"),
    ("mother_name", "Mother_name"),
    ("spouse_name", "Spouse_name"),
    ("gender", "Gender"),
    ("marital_status", "Merital_status"),
    ("picture", "Picture"),
    ("qualification", "Qualification"),
    ("special", "Special"),
    ("date_of_birth", "Date_of_birth"),
    ("birth_district", "Birth_district"),
    ("present_address", "Present_address"),
    ("permanent_address", "Permanent_address"),
    ("voter_area", "Voter_area"),
    ("occupation", "Occupation"),
    ("specification_sign", "Specification_sign"),
    ("b_group", "B_group"),
    ("tin", "TIN"),
    ("license", "License"),
    ("passport", "Passport"),
    ("iris_dna", "IRIS_DNA"),
    ("phone", "Phone"),
    ("nationality", "Nationality"),
    ("f_print", "F_print"),
    ("death_date", "Death_date"),
)

INFORMATION_COLUMNS: tuple[str, ...] = tuple(col for _a, col in INFORMATION_FIELDS)
_ATTR_FOR_COLUMN = {col: attr for attr, col in INFORMATION_FIELDS}

BINARY_COLUMNS = frozenset({"Picture", "IRIS_DNA", "F_print"})
DATE_COLUMNS = frozenset({"Date_of_birth", "Death_date"})
IDENTITY_COLUMNS = frozenset({"DID", "National_ID"})

LINKED_TABLES: dict[str, dict] = {
    "criminal_record": {
        "id_column": "Record_ID",
        "columns": ("Record_ID", "National_ID", "Record_no", "Case_no", "Type",
                    "Place", "Police_station", "Date", "Status", "Details"),
    },
    "bank_acc_loan": {
        "id_column": "Bank_ID",
        "columns": ("Bank_ID", "National_ID", "Account_name", "Bank_name", "Branch_name",
                    "Account_no", "Card_no", "Account_type", "Date", "Remarks"),
    },
    "education": {
        "id_column": "Education_ID",
        "columns": ("Education_ID", "National_ID", "Degree_name", "Year",
                    "Registration_no", "Roll_no", "Result", "Marks", "Remarks"),
    },
    "job_record": {
        "id_column": "Job_ID",
        "columns": ("Job_ID", "National_ID", "Job_title", "Institute", "Address",
                    "Designation", "Joining_date", "Departure_date", "Remarks"),
    },
}

#: Verification verdicts rendered by the classic UI as these exact strings.
LEGACY_MATCH = ".....OK"
LEGACY_MISMATCH = "XXXXXXXXXXXX...Wrong"

PRINTOUT_HEADER = "BDPS OFFICIAL RECORD"


class VerifyResult(str, Enum):
    MATCH = "Match"
    MISMATCH = "Mismatch"
    UNKNOWN_FIELD = "UnknownField"


class Role(str, Enum):
    CITIZEN = "citizen"
    CORPORATE = "corporate"
    DATA_ENTRY = "data_entry"


@dataclass(frozen=True)
class Actor:
    role: Role
    subject: str = ""


@dataclass(frozen=True)
class VerificationReport:
    """Per-field verdicts only; stored values never appear in any form."""

    national_id: str
    results: dict

    def to_json(self) -> str:
        return json.dumps(
            {"national_id": self.national_id,
             "results": {k: v.value for k, v in self.results.items()}},
            ensure_ascii=False,
        )

    def legacy_lines(self) -> list[str]:
        verdict = {
            VerifyResult.MATCH: LEGACY_MATCH,
            VerifyResult.MISMATCH: LEGACY_MISMATCH,
            VerifyResult.UNKNOWN_FIELD: "...unknown field",
        }
        return [f"{name} {verdict[res]}" for name, res in self.results.items()]


@dataclass
class CitizenRecord:
    national_id: str
    did: int | None = None
    pin_id: str = ""
    voter_id: str = ""
    name: str = ""
    english_name: str = ""
    father_name: str = ""
    mother_name: str = ""
    spouse_name: str = ""
    gender: str = ""
    marital_status: str = ""
    picture: bytes = b""
    qualification: str = ""
    special: str = ""
    date_of_birth: date | None = None
    birth_district: str = ""
    present_address: str = ""
    permanent_address: str = ""
    voter_area: str = ""
    occupation: str = ""
    specification_sign: str = ""
    b_group: str = ""
    tin: str = ""
    license: str = ""
    passport: str = ""
    iris_dna: bytes = b""
    phone: str = ""
    nationality: str = ""
    f_print: bytes = b""
    death_date: date | None = None


@dataclass(frozen=True)
class OwnerView:
    """Full record as returned to its authenticated owner."""

    national_id: str
    fields: dict
    linked: dict
    version: int
    archived: bool


@dataclass(frozen=True)
class ArchiveReceipt:
    national_id: str
    death_date: str
    seq: int
    archive_entries: int


def _canon(value) -> str:
    if value is None:
        return ""
    return str(value).strip()


def record_to_fields(record: CitizenRecord) -> dict:
    """Canonical column->value map: dates ISO, binary base64, DID integer."""
    fields: dict = {}
    for attr, col in INFORMATION_FIELDS:
        value = getattr(record, attr)
        if col == "DID":
            fields[col] = value if value is not None else 0
        elif col in BINARY_COLUMNS:
            fields[col] = base64.b64encode(value).decode("ascii") if value else ""
        elif col in DATE_COLUMNS:
            fields[col] = value.isoformat() if value else ""
        else:
            fields[col] = value if isinstance(value, str) else _canon(value)
    return fields


def record_from_external(obj: dict) -> CitizenRecord:
    """Build a record from a column-keyed mapping (JSONL line, CSV row, API body).

    Unknown keys are a hard error; missing keys default to empty. Binary
    columns carry base64 text, date columns ISO dates. DID may only be
    supplied empty: the registry assigns it.
    """
    for key in obj:
        if key not in _ATTR_FOR_COLUMN:
            raise UnknownField(key)
    nid_text = _canon(obj.get("National_ID"))
    if not nid_text:
        raise InvalidNid("National_ID is required")
    kwargs: dict = {}
    for col, raw in obj.items():
        attr = _ATTR_FOR_COLUMN[col]
        if col == "DID":
            if raw not in (None, "", 0, "0"):
                raise ValidationError("DID is assigned by the registry and must be left empty")
            continue
        if col == "National_ID":
            kwargs[attr] = nid_text
        elif col in BINARY_COLUMNS:
            text = _canon(raw)
            try:
                kwargs[attr] = base64.b64decode(text.encode("ascii"), validate=True) if text else b""
            except Exception:
                raise ValidationError(f"{col} must be base64-encoded") from None
        elif col in DATE_COLUMNS:
            text = _canon(raw)
            try:
                kwargs[attr] = date.fromisoformat(text) if text else None
            except ValueError:
                raise ValidationError(f"{col} must be an ISO date (YYYY-MM-DD)") from None
        else:
            kwargs[attr] = raw if isinstance(raw, str) else _canon(raw)
    return CitizenRecord(**kwargs)


def _render_value(col: str, value) -> str:
    if col in BINARY_COLUMNS and value:
        raw = base64.b64decode(value)
        return f"<{len(raw)} bytes sha256:{hashlib.sha256(raw).hexdigest()[:16]}>"
    return str(value)


def render_official_printout(view: OwnerView | CitizenRecord | dict) -> str:
    """Fixed-layout official text: header, then Label: value per set field.

    Byte-identical across runs for identical records; fields appear in
    schema order and empty fields are omitted.
    """
    if isinstance(view, CitizenRecord):
        fields = record_to_fields(view)
        if view.did is None:
            fields["DID"] = ""
    elif isinstance(view, OwnerView):
        fields = view.fields
    else:
        fields = view
    lines = [PRINTOUT_HEADER]
    for col in INFORMATION_COLUMNS:
        value = fields.get(col, "")
        if value in ("", None, 0) and col == "DID":
            continue
        if value in ("", None):
            continue
        lines.append(f"{col}: {_render_value(col, value)}")
    return "\n".join(lines) + "\n"


def naive_verify(fields: dict, claims: dict) -> dict:
    """Brute-force verification oracle: plain dict comparison, no registry."""
    out = {}
    for name, claimed in claims.items():
        if name not in INFORMATION_COLUMNS:
            out[name] = VerifyResult.UNKNOWN_FIELD
        elif _canon(claimed) == _canon(fields.get(name, "")):
            out[name] = VerifyResult.MATCH
        else:
            out[name] = VerifyResult.MISMATCH
    return out


class Registry:
    """Registry state machine bound to one append-only log.

    ``archive_path``, when given, receives one JSON line per archived
    citizen so the deceased live in their own file, apart from the log.
    """

    def __init__(self, log: LogStore, archive_path: str | Path | None = None,
                 state: dict | None = None):
        self.log = log
        self.archive_path = Path(archive_path) if archive_path else None
        self._lock = threading.RLock()
        self.state: dict = replay(log.entries) if state is None else state
        self._did_counter = 0
        self._table_counters = {t: 0 for t in LINKED_TABLES}
        self._recount()

    def _recount(self) -> None:
        self._did_counter = 0
        for t in self._table_counters:
            self._table_counters[t] = 0
        for slot in self.state.values():
            instances = list(slot["archived"])
            if slot["live"] is not None:
                instances.append(slot["live"])
            self._did_counter += len(instances)
            for inst in instances:
                for table, rows in inst["linked"].items():
                    self._table_counters[table] += len(rows)

    # -- helpers ---------------------------------------------------------

    def _canonical_nid(self, national_id: str) -> str:
        try:
            return canonical_nid(_canon(national_id))
        except NidError as err:
            raise InvalidNid(str(err)) from None

    def _live(self, key: str) -> dict | None:
        slot = self.state.get(key)
        return slot["live"] if slot else None

    def _append(self, key: str, kind: OpKind, payload: dict) -> LogEntry:
        raw = json.dumps(payload, sort_keys=True, ensure_ascii=False,
                         separators=(",", ":")).encode("utf-8")
        entry = self.log.append(key, kind, raw)
        apply_entry(self.state, entry)
        return entry

    def apply_replicated(self, entry: LogEntry) -> None:
        """Reduce an entry replicated from another site into this state."""
        with self._lock:
            apply_entry(self.state, entry)
            if entry.op_kind is OpKind.INSERT:
                self._did_counter += 1
            elif entry.op_kind is OpKind.INSERT_LINKED:
                self._table_counters[entry.payload_dict()["table"]] += 1

    def reload(self) -> None:
        """Rebuild state from the backing log, e.g. after log surgery."""
        with self._lock:
            self.state = replay(self.log.entries)
            self._recount()

    # -- operations ------------------------------------------------------

    def insert_citizen(self, record: CitizenRecord) -> int:
        with self._lock:
            key = self._canonical_nid(record.national_id)
            if self._live(key) is not None:
                raise DuplicateId(f"national id {key} is already registered")
            did = self._did_counter + 1
            fields = record_to_fields(record)
            fields["DID"] = did
            fields["National_ID"] = key
            self._append(key, OpKind.INSERT, {"fields": fields})
            self._did_counter = did
            return did

    def insert_linked(self, table: str, row: dict) -> int:
        with self._lock:
            if table not in LINKED_TABLES:
                raise UnknownField(table)
            spec = LINKED_TABLES[table]
            for key in row:
                if key not in spec["columns"]:
                    raise UnknownField(key)
            key = self._canonical_nid(row.get("National_ID", ""))
            slot = self.state.get(key)
            if slot is None or (slot["live"] is None and not slot["archived"]):
                raise OrphanRecord(f"no citizen {key} to attach a {table} row to")
            if slot["live"] is None:
                raise ArchivedTarget(f"citizen {key} is archived")
            if table == "job_record":
                self._check_job_dates(row)
            surrogate = self._table_counters[table] + 1
            stored = {col: _canon(row.get(col, "")) for col in spec["columns"]}
            stored[spec["id_column"]] = surrogate
            stored["National_ID"] = key
            self._append(key, OpKind.INSERT_LINKED, {"table": table, "row": stored})
            self._table_counters[table] = surrogate
            return surrogate

    @staticmethod
    def _check_job_dates(row: dict) -> None:
        joined, left = _canon(row.get("Joining_date")), _canon(row.get("Departure_date"))
        if joined and left:
            try:
                if date.fromisoformat(left) < date.fromisoformat(joined):
                    raise ValidationError("Departure_date precedes Joining_date")
            except ValueError:
                raise ValidationError("job dates must be ISO dates (YYYY-MM-DD)") from None

    def verify_fields(self, national_id: str, claims: dict) -> VerificationReport:
        with self._lock:
            try:
                key = self._canonical_nid(national_id)
            except InvalidNid:
                raise NoSuchCitizen("no live citizen under that id") from None
            live = self._live(key)
            if live is None:
                raise NoSuchCitizen("no live citizen under that id")
            results = {}
            for name, claimed in claims.items():
                if name not in INFORMATION_COLUMNS:
                    results[name] = VerifyResult.UNKNOWN_FIELD
                elif _canon(claimed) == _canon(live["fields"].get(name, "")):
                    results[name] = VerifyResult.MATCH
                else:
                    results[name] = VerifyResult.MISMATCH
            return VerificationReport(key, results)

    def owner_lookup(self, national_id: str, password: str, credentials) -> OwnerView:
        """Full record for its owner. Failures are uniform: a wrong password,
        an unknown id and an unparseable id are indistinguishable."""
        with self._lock:
            try:
                key = self._canonical_nid(national_id)
            except InvalidNid:
                raise AuthFailure() from None
            if not credentials.verify_citizen(key, password):
                raise AuthFailure()
            view = self.owner_view(key)
            if view is None:
                raise AuthFailure()
            return view

    def owner_view(self, key: str) -> OwnerView | None:
        """Post-authentication record view; archived citizens remain viewable."""
        with self._lock:
            slot = self.state.get(key)
            if slot is None:
                return None
            record = slot["live"] if slot["live"] is not None else (
                slot["archived"][-1] if slot["archived"] else None)
            if record is None:
                return None
            return OwnerView(
                national_id=key,
                fields=dict(record["fields"]),
                linked={t: [dict(r) for r in rows] for t, rows in record["linked"].items()},
                version=record["version"],
                archived=slot["live"] is None,
            )

    def update_citizen(self, national_id: str, deltas: dict, actor: Actor) -> int:
        with self._lock:
            if actor.role is not Role.DATA_ENTRY:
                raise AuthFailure()
            key = self._canonical_nid(national_id)
            live = self._live(key)
            if live is None:
                raise NoSuchCitizen(f"no live citizen {key}")
            clean = {}
            for name, value in deltas.items():
                if name not in INFORMATION_COLUMNS:
                    raise UnknownField(name)
                if name in IDENTITY_COLUMNS:
                    raise ValidationError(f"{name} is immutable")
                if name in DATE_COLUMNS:
                    text = _canon(value)
                    if text:
                        try:
                            date.fromisoformat(text)
                        except ValueError:
                            raise ValidationError(f"{name} must be an ISO date") from None
                    clean[name] = text
                else:
                    clean[name] = value if isinstance(value, str) else _canon(value)
            self._append(key, OpKind.UPDATE, {"deltas": clean})
            return self._live(key)["version"]

    def archive_deceased(self, national_id: str, death_date: str | date) -> ArchiveReceipt:
        with self._lock:
            key = self._canonical_nid(national_id)
            slot = self.state.get(key)
            if slot is None or (slot["live"] is None and not slot["archived"]):
                raise NoSuchCitizen(f"no citizen {key}")
            if slot["live"] is None:
                raise AlreadyArchived(f"citizen {key} is already archived")
            dd = death_date.isoformat() if isinstance(death_date, date) else _canon(death_date)
            try:
                date.fromisoformat(dd)
            except ValueError:
                raise ValidationError("death_date must be an ISO date") from None
            entry = self._append(key, OpKind.ARCHIVE, {"death_date": dd})
            archived = slot["archived"][-1]
            if self.archive_path is not None:
                line = json.dumps(
                    {"national_id": key, "death_date": dd, "record": archived["fields"],
                     "linked": archived["linked"], "version": archived["version"],
                     "archived_at_seq": entry.seq},
                    sort_keys=True, ensure_ascii=False, separators=(",", ":"))
                self.archive_path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.archive_path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
            return ArchiveReceipt(key, dd, entry.seq, self.archived_count)

    # -- introspection ---------------------------------------------------

    @property
    def live_count(self) -> int:
        with self._lock:
            return sum(1 for slot in self.state.values() if slot["live"] is not None)

    @property
    def archived_count(self) -> int:
        with self._lock:
            return sum(len(slot["archived"]) for slot in self.state.values())

    def live_nids(self) -> list[str]:
        with self._lock:
            return sorted(k for k, slot in self.state.items() if slot["live"] is not None)

    def current_state_hash(self) -> int:
        with self._lock:
            return state_hash(self.state)

    def linked_rows(self, key: str, table: str) -> list[dict]:
        with self._lock:
            live = self._live(key)
            if live is None:
                return []
            return [dict(r) for r in live["linked"].get(table, [])]
