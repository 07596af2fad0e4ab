"""Table output: CSV with a ``#``-comment provenance header, or newline-delimited JSON.

Data sections are deterministic.  The only time-dependent content is the
``# written:`` comment line of CSV files.
"""
from __future__ import annotations

import csv
import datetime as _dt
import functools
import io as _io
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__

FORMATS = ("csv", "ndjson")


@functools.lru_cache(maxsize=1)
def build_tag() -> str:
    """``<version>+<git describe>`` when the package sits in a git checkout, else ``<version>``."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        desc = out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def _plain(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _cell(v):
    v = _plain(v)
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def format_table(rows: list[dict], header: dict | None = None, fmt: str = "csv",
                 columns: list[str] | None = None, timestamp: bool = True) -> str:
    """Render rows to text.

    ``header`` holds provenance (parameters, seed, scenario); the build tag is
    added automatically.  CSV puts it in ``#`` comment lines; ndjson merges
    it into every record as ``"provenance"``.
    """
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}; choose one of {FORMATS}")
    prov = {k: _plain(v) for k, v in (header or {}).items()}
    prov["build"] = build_tag()
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    buf = _io.StringIO()
    if fmt == "csv":
        for k, v in prov.items():
            buf.write(f"# {k}: {json.dumps(v, sort_keys=True, default=str)}\n")
        if timestamp:
            buf.write(f"# written: {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in columns])
    else:
        for r in rows:
            rec = {c: _plain(r.get(c)) for c in columns}
            rec["provenance"] = prov
            buf.write(json.dumps(rec, sort_keys=False, default=str) + "\n")
    return buf.getvalue()


def write_table(dest, rows: list[dict], header: dict | None = None, fmt: str = "csv",
                columns: list[str] | None = None) -> None:
    """Write to a path, or to stdout when ``dest`` is ``None`` or ``"-"``."""
    text = format_table(rows, header, fmt, columns)
    if dest is None or str(dest) == "-":
        sys.stdout.write(text)
        return
    p = Path(dest)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)


def read_table(path) -> tuple[dict, list[dict]]:
    """Inverse of :func:`write_table` for CSV: ``(header, rows)`` with string cells."""
    header, lines = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# "):
            key, _, val = line[2:].partition(": ")
            try:
                header[key] = json.loads(val)
            except json.JSONDecodeError:
                header[key] = val
        else:
            lines.append(line)
    return header, list(csv.DictReader(lines))


def data_section(text: str) -> str:
    """Text without comment lines; used to compare reruns."""
    return "\n".join(l for l in text.splitlines() if not l.startswith("#"))


def estimate_row(name: str, est, regime=None, seed=None, **extra) -> dict:
    """Estimate schema: functional, value, std_err, n_units, method, seed, parameters."""
    row = {"functional": name, "value": est.value, "std_err": est.std_err,
           "n_units": est.n_units, "method": est.method, "seed": seed}
    if regime is not None:
        row.update({"n": regime.n, "beta": regime.beta, "eps": regime.eps})
    row.update(extra)
    return row
