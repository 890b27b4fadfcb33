"""Matrix files (CSV or JSON, chosen by extension) and small output helpers."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import FormatError

SCHEMA_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _check_rows(rows: list) -> np.ndarray:
    if not rows:
        raise FormatError("matrix file is empty")
    width = len(rows[0])
    for k, row in enumerate(rows):
        if len(row) != width:
            raise FormatError(f"row {k + 1} has {len(row)} entries, expected {width}", row=k + 1)
    return np.array(rows, dtype=np.float64)


def parse_matrix_csv(text: str) -> np.ndarray:
    """Comma-separated decimals; an optional non-numeric header line is skipped."""
    lines = [ln for ln in csv.reader(io.StringIO(text)) if ln and any(c.strip() for c in ln)]
    if lines and not all(_is_number(c) for c in lines[0]):
        lines = lines[1:]
    rows = []
    for k, ln in enumerate(lines):
        try:
            rows.append([float(c) for c in ln])
        except ValueError:
            raise FormatError(f"row {k + 1} contains a non-numeric entry", row=k + 1) from None
    return _check_rows(rows)


def parse_matrix_json(text: str) -> np.ndarray:
    doc = json.loads(text)
    if isinstance(doc, dict):
        doc = doc.get("matrix")
    if not isinstance(doc, list) or not all(isinstance(r, list) for r in doc):
        raise FormatError("expected a JSON array of arrays")
    return _check_rows(doc)


def load_matrix(path) -> np.ndarray:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return parse_matrix_json(text)
    return parse_matrix_csv(text)


def matrix_to_csv(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    lines = [",".join(f"c{j}" for j in range(M.shape[1]))]
    lines += [",".join(_fmt(x) for x in row) for row in M]
    return "\n".join(lines) + "\n"


def matrix_to_json(M) -> str:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    return json.dumps([[float(x) for x in row] for row in M]) + "\n"


def save_matrix(path, M, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("json" if path.suffix.lower() == ".json" else "csv")
    path.write_text(matrix_to_json(M) if fmt == "json" else matrix_to_csv(M))


def rows_to_csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) if isinstance(r[c], float) else r[c] for c in columns])
    return buf.getvalue()


def report_json(doc: dict) -> str:
    return json.dumps({"schema_version": SCHEMA_VERSION, **doc}, indent=1, sort_keys=True) + "\n"
