"""Parsing, validation and formatting of the 13-digit national ID.

The identifier is a fixed-width decimal string ``DDRTTUUSSSSSS``: a 2-digit
district code, 1-digit RMO code, 2-digit thana code, 2-digit union code and
a 6-digit per-citizen serial. No checksum exists and no official code tables
are published, so any digit combination is structurally valid; an optional
allow-list of district codes can be checked separately.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import BdpsError

NID_LENGTH = 13

# (name, width) in positional order
SEGMENTS = (
    ("district", 2),
    ("rmo", 1),
    ("thana", 2),
    ("union", 2),
    ("serial", 6),
)

_DIGITS = frozenset("0123456789")


class NidError(BdpsError):
    """Base class for national-ID parse/format failures."""


class LengthError(NidError):
    def __init__(self, text: str):
        super().__init__(f"national id must be {NID_LENGTH} digits, got length {len(text)}")
        self.length = len(text)


class DigitError(NidError):
    def __init__(self, text: str, position: int):
        super().__init__(
            f"national id contains non-digit character {text[position]!r} at position {position}"
        )
        self.position = position


class RangeError(NidError):
    def __init__(self, segment: str, value: int, width: int):
        super().__init__(f"segment {segment}={value} does not fit in {width} digit(s)")
        self.segment = segment
        self.value = value


class DistrictNotAllowed(NidError):
    def __init__(self, district: int):
        super().__init__(f"district code {district:02d} is not in the configured allow-list")
        self.district = district


@dataclass(frozen=True, order=True)
class NationalId:
    """The five positional segments of a parsed national ID."""

    district: int
    rmo: int
    thana: int
    union_code: int
    serial: int


def parse_nid(text: str) -> NationalId:
    """Split a 13-digit string into its five segments.

    Total over strings: any input either parses or raises a typed error.
    Only ASCII decimal digits are accepted; the canonical form is ASCII.
    """
    if len(text) != NID_LENGTH:
        raise LengthError(text)
    for pos, ch in enumerate(text):
        if ch not in _DIGITS:
            raise DigitError(text, pos)
    values = []
    offset = 0
    for _name, width in SEGMENTS:
        values.append(int(text[offset : offset + width]))
        offset += width
    return NationalId(*values)


def format_nid(nid: NationalId) -> str:
    """Render the canonical zero-padded 13-digit form.

    Inverse of :func:`parse_nid`: ``parse_nid(format_nid(x)) == x`` for every
    in-range value.
    """
    parts = []
    for (name, width), value in zip(SEGMENTS, (nid.district, nid.rmo, nid.thana, nid.union_code, nid.serial)):
        if not isinstance(value, int) or value < 0 or value >= 10**width:
            raise RangeError(name, value, width)
        parts.append(f"{value:0{width}d}")
    return "".join(parts)


def canonical_nid(text: str) -> str:
    """Parse then re-format, returning the canonical 13-digit string."""
    return format_nid(parse_nid(text))


def check_district_allowed(nid: NationalId, allowed: frozenset[int] | set[int] | None) -> None:
    """Enforce an optional district allow-list; no-op when ``allowed`` is None."""
    if allowed is not None and nid.district not in allowed:
        raise DistrictNotAllowed(nid.district)


def load_district_allowlist(path) -> frozenset[int]:
    """Read an allow-list file: one 2-digit district code per line, # comments."""
    codes = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            codes.add(int(line))
    return frozenset(codes)
