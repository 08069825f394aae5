"""Deterministic artifact serialization with embedded provenance.

Every file this package writes carries (tool version, config hash, seed)
and no timestamps, so re-running a stage with identical inputs
reproduces byte-identical artifacts.  CSV files start with ``#``-prefixed
provenance comment lines followed by a header row; floats are written
with 17 significant digits so they round-trip exactly.  JSON artifacts
are versioned documents with sorted keys.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import pathlib

import pandas as pd

from . import __version__

__all__ = [
    "format_float",
    "make_provenance",
    "config_digest",
    "write_csv",
    "read_csv",
    "write_json",
    "read_json",
    "sha256_file",
]

_JSON_FORMATS = {
    "model": "ocuflow-model",
    "calibration": "ocuflow-calibration",
    "profile": "ocuflow-profile",
    "report": "ocuflow-report",
    "thresholds": "ocuflow-thresholds",
    "reference": "ocuflow-reference",
}
FORMAT_VERSION = 1


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def config_digest(payload: dict) -> str:
    """Stable 16-hex-char digest of a JSON-serializable mapping."""
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def make_provenance(config_hash: str, seed: int, **extra) -> dict:
    prov = {"tool": "ocuflow", "tool_version": __version__,
            "config_hash": str(config_hash), "seed": int(seed)}
    prov.update(extra)
    return prov


def _cell(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, float):
        return format_float(value)
    return str(value)


def write_csv(path, header: list[str], rows, provenance: dict) -> None:
    buf = io.StringIO()
    for key in sorted(provenance):
        buf.write(f"# {key} = {provenance[key]}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    pathlib.Path(path).write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path) -> tuple[pd.DataFrame, dict]:
    """Read a provenance-commented CSV; returns (frame, provenance)."""
    path = pathlib.Path(path)
    provenance = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                key, _, value = body.partition("=")
                provenance[key.strip()] = value.strip()
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    return frame, provenance


def write_json(path, kind: str, payload: dict, provenance: dict) -> None:
    if kind not in _JSON_FORMATS:
        raise ValueError(f"unknown artifact kind {kind!r}")
    doc = {
        "format": _JSON_FORMATS[kind],
        "format_version": FORMAT_VERSION,
        "provenance": provenance,
        **payload,
    }
    text = json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    pathlib.Path(path).write_text(text, encoding="utf-8")


def read_json(path, kind: str) -> dict:
    doc = json.loads(pathlib.Path(path).read_text(encoding="utf-8"))
    expected = _JSON_FORMATS[kind]
    if doc.get("format") != expected:
        raise ValueError(f"{path}: expected format {expected!r}, got {doc.get('format')!r}")
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    return doc


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(pathlib.Path(path).read_bytes())
    return h.hexdigest()
