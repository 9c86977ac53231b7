"""CSV/JSON writers shared by the surface exporters and the CLI."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from . import __version__


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.10g}"
    return str(x)


def provenance_line(meta: dict | None) -> str:
    body = {"version": __version__}
    if meta:
        body["config"] = meta
    return "# liquidation " + json.dumps(body, sort_keys=True, default=str)


def write_csv(path, header, rows, meta: dict | None = None) -> Path:
    """Write ``rows`` under ``header`` with a provenance comment as first line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(provenance_line(meta) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(x) for x in row])
    return path


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv` as ``(header, list of rows)``."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, [row for row in reader]


def write_json(path, doc: dict, meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    out = dict(doc)
    out["_provenance"] = {"version": __version__, "config": meta or {}}
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    return path
