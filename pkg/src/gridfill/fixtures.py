"""Access to the bundled test fixtures (feeder + profile files)."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def bundled_feeder_path() -> Path:
    """Synthetic 123-bus-class radial feeder (260 non-slack phases)."""
    return Path(str(resources.files("gridfill").joinpath("data/feeder_123bus.json")))


def bundled_profile_path() -> Path:
    """Four-snapshot injection profile matching the bundled feeder."""
    return Path(str(resources.files("gridfill").joinpath("data/profile_123bus.csv")))
