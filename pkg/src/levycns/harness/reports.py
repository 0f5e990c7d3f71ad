"""Artifact writers: ledger CSV, summary JSON, snapshots."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import fields
from pathlib import Path

import jsonschema
import numpy as np

from levycns.diagnostics import LEDGER_COLUMNS, EntropyLedgerRow
from levycns.harness.config import load_schema
from levycns.integrator import checkpoint

_INT_COLUMNS = {f.name for f in fields(EntropyLedgerRow) if f.type in ("int", int)}


def _fmt(v) -> str:
    # repr of a Python float is the shortest round-tripping form, so CSVs are bit-stable.
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def ledger_csv(rows, columns=LEDGER_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        d = r.as_dict() if hasattr(r, "as_dict") else r
        w.writerow([_fmt(d[c]) for c in columns])
    return buf.getvalue()


def table_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def read_ledger_csv(path: Path) -> list[EntropyLedgerRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in LEDGER_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"ledger {path} is missing columns {missing}")
        out = []
        for rec in reader:
            out.append(EntropyLedgerRow(**{
                c: int(rec[c]) if c in _INT_COLUMNS else float(rec[c]) for c in LEDGER_COLUMNS
            }))
    return out


def sanitize(obj):
    """JSON-safe copy: numpy scalars and arrays to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return sanitize(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def dumps_summary(summary: dict) -> str:
    clean = sanitize(summary)
    jsonschema.validate(clean, load_schema("summary.schema.json"))
    return json.dumps(clean, indent=2, sort_keys=True) + "\n"


class ArtifactWriter:
    """Collects files under one output directory; writes are immediate, paths are recorded."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.paths: list[str] = []
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise OSError(f"output directory {self.root} is not writable: {exc}") from exc

    def _target(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        if rel not in self.paths:
            self.paths.append(rel)
        return p

    def text(self, rel: str, content: str) -> Path:
        p = self._target(rel)
        p.write_text(content)
        return p

    def binary(self, rel: str, content: bytes) -> Path:
        p = self._target(rel)
        p.write_bytes(content)
        return p

    def ledger(self, rel: str, rows) -> Path:
        return self.text(rel, ledger_csv(rows))

    def snapshot(self, rel: str, state, aux: dict | None = None) -> Path:
        return self.binary(rel, checkpoint(state, aux))

    def summary(self, summary: dict) -> Path:
        summary = dict(summary)
        summary["artifacts"] = sorted(set(self.paths) | {"summary.json"})
        p = self.root / "summary.json"
        p.write_text(dumps_summary(summary))
        return p
