"""Shared exception base for the bdps package.

Every module defines its own exception types; they all derive from
:class:`BdpsError` so callers can catch the whole family. Each error carries
a stable machine-readable ``code`` (the class name) used by the HTTP layer.
"""


class BdpsError(Exception):
    """Base class for all domain errors raised by this package."""

    @property
    def code(self) -> str:
        return type(self).__name__
