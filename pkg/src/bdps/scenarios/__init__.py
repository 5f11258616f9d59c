"""Bundled simulation scenarios, addressable by bare file name."""

from importlib import resources
from pathlib import Path


def scenario_path(name: str) -> Path | None:
    """Path to a bundled scenario, or None if no such bundle exists."""
    candidate = resources.files(__package__) / name
    return Path(str(candidate)) if candidate.is_file() else None


def bundled_names() -> list[str]:
    return sorted(p.name for p in resources.files(__package__).iterdir()
                  if p.name.endswith(".scn"))
