"""CSV ingestion and result serialization."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, TextIO, Union

import numpy as np

from .data import Dataset
from .errors import ParseError, SchemaError
from .simulation import GRID_COLUMNS, GridRow

PathLike = Union[str, Path]
MISSING_TOKENS = frozenset({"", "na"})


@dataclass(frozen=True)
class InputSchema:
    """Which CSV columns play which role.

    ``indicator_col``, when given, must hold 1 exactly where the outcome is
    present and 0 where it is empty or ``NA``.
    """

    y_col: str = "y"
    u_cols: tuple = ("u",)
    z_cols: tuple = ("z",)
    indicator_col: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "u_cols", _as_names(self.u_cols))
        object.__setattr__(self, "z_cols", _as_names(self.z_cols))
        if not self.y_col:
            raise SchemaError("an outcome column is required")
        if not self.u_cols or not self.z_cols:
            raise SchemaError("need at least one u column and one z column")
        roles = [self.y_col, *self.u_cols, *self.z_cols] + ([self.indicator_col] if self.indicator_col else [])
        if len(set(roles)) != len(roles):
            raise SchemaError(f"a column is assigned more than one role: {roles}")

    @property
    def columns(self) -> list[str]:
        return [self.y_col, *self.u_cols, *self.z_cols]


def _as_names(cols) -> tuple:
    if isinstance(cols, str):
        cols = cols.split(",")
    return tuple(c.strip() for c in cols if c.strip())


def _is_missing(cell: str) -> bool:
    return cell.strip().lower() in MISSING_TOKENS


def _number(cell: str, row: int, col: str) -> float:
    try:
        v = float(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {col!r}: cannot parse {cell!r} as a number") from None
    if not math.isfinite(v):
        raise ParseError(f"row {row}, column {col!r}: value {cell!r} is not finite")
    return v


def read_dataset(path: PathLike, schema: InputSchema = InputSchema()) -> Dataset:
    """Read a CSV with a header row.

    Row numbers in error messages count the header as row 1.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        wanted = schema.columns + ([schema.indicator_col] if schema.indicator_col else [])
        absent = [c for c in wanted if c not in header]
        if absent:
            raise SchemaError(f"columns not found in header: {absent}")
        pos = {c: header.index(c) for c in wanted}

        y, u, z, r_col = [], [], [], []
        for row_no, cells in enumerate(reader, start=2):
            if not cells or all(not c.strip() for c in cells):
                continue
            if len(cells) < len(header):
                raise ParseError(f"row {row_no}: expected {len(header)} cells, got {len(cells)}")
            cell = cells[pos[schema.y_col]]
            y.append(math.nan if _is_missing(cell) else _number(cell, row_no, schema.y_col))
            u.append([_number(cells[pos[c]], row_no, c) for c in schema.u_cols])
            z.append([_number(cells[pos[c]], row_no, c) for c in schema.z_cols])
            if schema.indicator_col:
                r_col.append((row_no, cells[pos[schema.indicator_col]].strip()))

    y = np.array(y, dtype=float)
    observed = ~np.isnan(y)
    for row_no, flag in r_col:
        if flag not in ("0", "1"):
            raise SchemaError(f"row {row_no}: indicator {schema.indicator_col!r} must be 0 or 1, got {flag!r}")
        if (flag == "1") != observed[row_no - 2]:
            raise SchemaError(
                f"row {row_no}: indicator {schema.indicator_col!r} is {flag} but the outcome is "
                f"{'present' if observed[row_no - 2] else 'missing'}"
            )
    return Dataset(y, observed.astype(np.int8), np.array(u).reshape(len(y), -1), np.array(z).reshape(len(y), -1))


def _fmt(v: float) -> str:
    # 17 significant digits round-trip any double exactly
    return "" if math.isnan(v) else f"{v:.17g}"


def write_dataset(path: PathLike, data: Dataset, schema: Optional[InputSchema] = None) -> None:
    if schema is None:
        schema = InputSchema(
            "y",
            tuple(f"u{j + 1}" for j in range(data.m_u)) if data.m_u > 1 else ("u",),
            tuple(f"z{j + 1}" for j in range(data.m_z)) if data.m_z > 1 else ("z",),
        )
    if len(schema.u_cols) != data.m_u or len(schema.z_cols) != data.m_z:
        raise SchemaError("schema column counts do not match the dataset")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = schema.columns + ([schema.indicator_col] if schema.indicator_col else [])
        w.writerow(header)
        for i in range(data.n):
            row = [_fmt(data.y[i]), *map(_fmt, data.u[i]), *map(_fmt, data.z[i])]
            if schema.indicator_col:
                row.append(str(int(data.r[i])))
            w.writerow(row)


def _plain(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, np.generic):
        return v.item()
    return v


def grid_to_csv(rows: Sequence[GridRow], out: Optional[TextIO] = None) -> str:
    buf = out if out is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_COLUMNS)
    for row in rows:
        rec = dataclasses.asdict(row)
        w.writerow([_fmt(rec[c]) if isinstance(rec[c], float) else rec[c] for c in GRID_COLUMNS])
    return buf.getvalue() if out is None else ""


def grid_to_records(rows: Iterable[GridRow], with_t_values: bool = True) -> list[dict]:
    recs = []
    for row in rows:
        rec = {k: _plain(v) for k, v in dataclasses.asdict(row).items()}
        if not with_t_values:
            rec.pop("t_values")
        recs.append(rec)
    return recs


def dump_json(obj, out: Optional[TextIO] = None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    if out is not None:
        out.write(text + "\n")
    return text
