"""Flat dotted-key JSON configs shared by the CLI and the test harness.

Config files are a single JSON object with keys like ``"train.lr"`` so they
diff cleanly and parse anywhere; command-line flags override file values.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from .errors import ConfigError, DataError


def load_flat_config(path) -> dict:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            flat = json.load(f)
    except OSError as e:
        raise DataError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(flat, dict):
        raise ConfigError(f"{path}: config must be a JSON object of dotted keys")
    return flat


def merge_overrides(flat: dict, overrides: dict) -> dict:
    """Overlay non-None override values onto a flat config."""
    merged = dict(flat)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return merged


def config_hash(flat: dict) -> str:
    """sha256 over the canonical JSON encoding of the flat config."""
    canon = json.dumps(flat, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def echo_config(out_dir, flat: dict) -> None:
    """Record the effective config (plus its hash) next to the outputs."""
    from .io import write_json

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_json(out_dir / "config.json", {"config": flat, "config_hash": config_hash(flat)})
