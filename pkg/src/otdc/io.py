"""CSV and JSON reading and writing for the command-line tools.

CSV files are UTF-8 with a mandatory header row and RFC 4180 quoting.
Output always uses LF line endings. Cell values are trimmed strings and
are never coerced to numbers, so a file read and written back unchanged
keeps its bytes (up to newline style).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .dist import Schema
from .fairness import ScoreTable

SCORE_COLUMNS = ("id", "score", "group", "label")


class InputError(Exception):
    """Bad input file or configuration; ``str`` names the file and line."""


def read_table(path) -> tuple[list[str], list[tuple[str, ...]]]:
    path = Path(path)
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise InputError(f"{path}:1: file is empty, a header row is required") from None
            if len(set(header)) != len(header) or not all(header):
                raise InputError(f"{path}:1: header names must be unique and non-empty")
            rows = []
            for row in reader:
                line = reader.line_num
                if not row:
                    continue
                if len(row) != len(header):
                    raise InputError(
                        f"{path}:{line}: expected {len(header)} fields, got {len(row)}"
                    )
                values = tuple(v.strip() for v in row)
                if not all(values):
                    raise InputError(f"{path}:{line}: empty field")
                rows.append(values)
    except (OSError, UnicodeDecodeError, csv.Error) as exc:
        raise InputError(f"{path}: {exc}") from None
    if not rows:
        raise InputError(f"{path}: no data rows")
    return header, rows


def _domain_key(values):
    try:
        return sorted(values, key=lambda v: (float(v), v))
    except ValueError:
        return sorted(values)


def infer_schema(header, *tables) -> Schema:
    """Observed values per column; numeric-looking domains sort by value."""
    domains = {}
    for i, name in enumerate(header):
        seen = dict.fromkeys(row[i] for rows in tables for row in rows)
        domains[name] = _domain_key(list(seen))
    return Schema.from_domains(domains)


def read_schema(path, header) -> Schema:
    """Schema file: one ``name = v1, v2, ...`` line per column."""
    path = Path(path)
    domains = {}
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from None
    for k, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name, sep, rest = line.partition("=")
        if not sep:
            raise InputError(f"{path}:{k}: expected 'name = v1, v2, ...'")
        domains[name.strip()] = [v.strip() for v in rest.split(",") if v.strip()]
    if sorted(domains) != sorted(header):
        raise InputError(f"{path}: schema columns {sorted(domains)} do not match header {header}")
    try:
        return Schema.from_domains({h: domains[h] for h in header})
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def check_rows(path, schema: Schema, rows) -> None:
    for k, row in enumerate(rows, start=2):
        try:
            schema.encode(row)
        except ValueError as exc:
            raise InputError(f"{path}:{k}: {exc}") from None


def write_table(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([[str(v) for v in row] for row in rows])


def format_float(x: float) -> str:
    return f"{x:.9g}"


def read_scores(path) -> ScoreTable:
    header, rows = read_table(path)
    missing = [c for c in SCORE_COLUMNS if c not in header]
    if missing:
        raise InputError(f"{path}:1: missing columns {missing}; need {list(SCORE_COLUMNS)}")
    idx = [header.index(c) for c in SCORE_COLUMNS]
    records = []
    for k, row in enumerate(rows, start=2):
        rid, score, group, label = (row[i] for i in idx)
        try:
            s = float(score)
        except ValueError:
            raise InputError(f"{path}:{k}: score {score!r} is not a number") from None
        if not 0.0 <= s <= 1.0:
            raise InputError(f"{path}:{k}: score {score!r} outside [0, 1]")
        if group not in ("a", "b"):
            raise InputError(f"{path}:{k}: group {group!r} must be 'a' or 'b'")
        if label not in ("0", "1"):
            raise InputError(f"{path}:{k}: label {label!r} must be 0 or 1")
        records.append((rid, s, group, int(label)))
    try:
        return ScoreTable.from_records(records)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def write_scores(path, table: ScoreTable) -> None:
    rows = [(i, format_float(s), g, y) for i, s, g, y in table.records()]
    write_table(path, SCORE_COLUMNS, rows)


def _rounded(obj):
    if isinstance(obj, dict):
        return {str(k): _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        x = float(format_float(x))
        return 0.0 if x == 0 else x
    return obj


def dumps_report(report: dict) -> str:
    """JSON with sorted keys and floats cut to 9 significant digits."""
    return json.dumps(_rounded(report), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_report(path, report: dict) -> None:
    Path(path).write_text(dumps_report(report), encoding="utf-8")


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment line."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise InputError(f"{path}: {exc}") from None
    out = {}
    for k, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InputError(f"{path}:{k}: expected 'key = value'")
        out[key.strip().replace("_", "-")] = value.strip()
    return out
