"""Shipped fixture networks and datasets (regenerate with scripts/make_fixtures.py)."""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np


def fixture_path(name: str) -> Path:
    path = Path(str(resources.files(__name__).joinpath(name)))
    if not path.exists():
        raise FileNotFoundError(f"no fixture named {name!r}")
    return path


def load_blobs() -> tuple:
    """The clustered 4-d two-class dataset: ``(x, y)`` arrays."""
    doc = json.loads(fixture_path("blobs.json").read_text(encoding="utf-8"))
    return np.array(doc["x"], dtype=np.float64), np.array(doc["y"], dtype=np.int64)
