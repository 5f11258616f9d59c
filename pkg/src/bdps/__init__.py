"""bdps: a desk-scale hybrid-cloud people registry.

A local elastic cluster with replicated append-only storage, an asynchronous
remote mirror used for backup, overflow and failover, field-level identity
verification that never discloses stored values, pay-per-use metering, and a
deterministic discrete-event simulator that exercises the real module code
under injected faults.
"""

__version__ = "0.1.0"

from .errors import BdpsError
from .nid import NationalId, format_nid, parse_nid

__all__ = ["BdpsError", "NationalId", "format_nid", "parse_nid", "__version__"]
