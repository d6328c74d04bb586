"""Python bindings for the plarseg core.

Configurations are plain dicts with the same layout as the JSON files under
``configs/``. Arrays come back as numpy arrays.
"""

import json
from pathlib import Path

from ._core import (
    BudgetLedger,
    Runner,
    class_stats,
    confidence_error_map,
    emd_error_map,
    euclid_distance,
    fuse,
    loop_config,
    maha_distance,
    make_dataset,
)

__all__ = [
    "BudgetLedger",
    "Runner",
    "class_stats",
    "confidence_error_map",
    "emd_error_map",
    "euclid_distance",
    "fuse",
    "load_config",
    "loop_config",
    "maha_distance",
    "make_dataset",
]


def load_config(path, **overrides):
    """Read a JSON run configuration and apply top-level overrides."""
    cfg = json.loads(Path(path).read_text())
    cfg.update(overrides)
    return loop_config(cfg)
