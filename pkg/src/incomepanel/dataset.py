"""Codebook parsing, wide-format ingestion and wide-to-long unrolling.

Tables hold one float64 array per column with ``NaN`` as the absent marker.
Whether a column is numeric or nominal is a property of its codebook entry,
not of the array, so nominal codes are stored as floats as well.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CodebookError, DataError

CODEBOOK_HEADER = [
    "name",
    "role",
    "kind",
    "missing_codes",
    "valid_values",
    "year_suffixes",
    "recode_ref",
    "bin_edges",
]
ROLES = ("id", "time", "feature", "target")
KINDS = ("numeric", "nominal")
DEFAULT_TIME_NAME = "year"
YEAR_SEP = "#"


@dataclass(frozen=True)
class VariableSpec:
    name: str
    role: str
    kind: str
    missing_codes: frozenset[int] = frozenset()
    # inclusive (low, high) intervals; a single value v is stored as (v, v)
    valid_values: tuple[tuple[int, int], ...] | None = None
    year_suffixes: tuple[int, ...] = ()
    recode_ref: str | None = None
    bin_edges: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise CodebookError(f"variable {self.name!r}: unknown role {self.role!r}")
        if self.kind not in KINDS:
            raise CodebookError(f"variable {self.name!r}: unknown kind {self.kind!r}")
        if self.bin_edges is not None:
            if self.role != "target":
                raise CodebookError(f"variable {self.name!r}: bin_edges only allowed on the target")
            if any(b >= a for b, a in zip(self.bin_edges, self.bin_edges[1:])) or not self.bin_edges:
                raise CodebookError(f"variable {self.name!r}: bin_edges must be strictly ascending")
        if len(set(self.year_suffixes)) != len(self.year_suffixes):
            raise CodebookError(f"variable {self.name!r}: duplicate year suffix")

    @property
    def repeated(self) -> bool:
        return bool(self.year_suffixes)

    def is_valid(self, value: float) -> bool:
        if self.valid_values is None:
            return True
        return any(lo <= value <= hi for lo, hi in self.valid_values)


@dataclass(frozen=True)
class Codebook:
    variables: tuple[VariableSpec, ...]
    years: tuple[int, ...]
    source: Path | None = None

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise CodebookError(f"duplicate variable name(s): {', '.join(dup)}")
        for role in ("id", "target"):
            count = sum(v.role == role for v in self.variables)
            if count != 1:
                raise CodebookError(f"codebook needs exactly one {role} variable, found {count}")
        if sum(v.role == "time" for v in self.variables) > 1:
            raise CodebookError("codebook has more than one time variable")
        for v in self.variables:
            missing = set(v.year_suffixes) - set(self.years)
            if missing:
                raise CodebookError(f"variable {v.name!r}: year(s) {sorted(missing)} not in codebook years")

    @classmethod
    def from_variables(cls, variables: Iterable[VariableSpec], source: Path | None = None) -> "Codebook":
        variables = tuple(variables)
        years = tuple(sorted({y for v in variables for y in v.year_suffixes}))
        return cls(variables, years, source)

    def __getitem__(self, name: str) -> VariableSpec:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(v.name == name for v in self.variables)

    @property
    def id(self) -> VariableSpec:
        return next(v for v in self.variables if v.role == "id")

    @property
    def target(self) -> VariableSpec:
        return next(v for v in self.variables if v.role == "target")

    @property
    def time_name(self) -> str:
        for v in self.variables:
            if v.role == "time":
                return v.name
        return DEFAULT_TIME_NAME

    @property
    def features(self) -> tuple[VariableSpec, ...]:
        return tuple(v for v in self.variables if v.role == "feature")

    @property
    def data_variables(self) -> tuple[VariableSpec, ...]:
        """Variables carried as table columns: features and target, codebook order."""
        return tuple(v for v in self.variables if v.role in ("feature", "target"))

    def wide_columns(self) -> list[tuple[str, int | None]]:
        cols: list[tuple[str, int | None]] = [(self.id.name, None)]
        for v in self.data_variables:
            if v.repeated:
                cols.extend((v.name, y) for y in v.year_suffixes)
            else:
                cols.append((v.name, None))
        return cols


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(";") if t.strip()]


def _parse_ints(text: str, what: str, lineno: int) -> list[int]:
    try:
        return [int(t) for t in _split_list(text)]
    except ValueError:
        raise CodebookError(f"line {lineno}: {what} must be semicolon-separated integers, got {text!r}") from None


def _parse_valid(text: str, lineno: int) -> tuple[tuple[int, int], ...] | None:
    tokens = _split_list(text)
    if not tokens:
        return None
    out = []
    for tok in tokens:
        try:
            if ":" in tok:
                lo, hi = (int(p) for p in tok.split(":", 1))
            else:
                lo = hi = int(tok)
        except ValueError:
            raise CodebookError(f"line {lineno}: bad valid_values token {tok!r}") from None
        if lo > hi:
            raise CodebookError(f"line {lineno}: empty valid_values range {tok!r}")
        out.append((lo, hi))
    return tuple(out)


def load_codebook(path: str | Path) -> Codebook:
    """Read a codebook CSV and validate it.

    List fields are semicolon separated; ``valid_values`` also accepts
    inclusive ``low:high`` ranges. Errors carry the 1-based line number.
    """
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise CodebookError(f"cannot open codebook {path}: {exc}") from exc
    variables = []
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != CODEBOOK_HEADER:
            raise CodebookError(f"line 1: codebook header must be {','.join(CODEBOOK_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(CODEBOOK_HEADER):
                raise CodebookError(f"line {lineno}: expected {len(CODEBOOK_HEADER)} fields, got {len(row)}")
            name, role, kind, miss, valid, years, recode, edges = (c.strip() for c in row)
            if not name or YEAR_SEP in name:
                raise CodebookError(f"line {lineno}: invalid variable name {name!r}")
            try:
                bin_edges = tuple(float(t) for t in _split_list(edges)) or None
            except ValueError:
                raise CodebookError(f"line {lineno}: bin_edges must be numbers, got {edges!r}") from None
            try:
                variables.append(
                    VariableSpec(
                        name=name,
                        role=role,
                        kind=kind,
                        missing_codes=frozenset(_parse_ints(miss, "missing_codes", lineno)),
                        valid_values=_parse_valid(valid, lineno),
                        year_suffixes=tuple(_parse_ints(years, "year_suffixes", lineno)),
                        recode_ref=recode or None,
                        bin_edges=bin_edges,
                    )
                )
            except CodebookError as exc:
                if str(exc).startswith("line "):
                    raise
                raise CodebookError(f"line {lineno}: {exc}") from None
    return Codebook.from_variables(variables, source=path)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class WideTable:
    """One row per individual; repeated measures keyed by ``(name, year)``."""

    codebook: Codebook
    ids: np.ndarray
    cells: dict[tuple[str, int | None], np.ndarray]

    def __len__(self) -> int:
        return len(self.ids)

    def column(self, name: str, year: int | None = None) -> np.ndarray:
        return self.cells[(name, year)]


def wide_header_name(name: str, year: int | None) -> str:
    return name if year is None else f"{name}{YEAR_SEP}{year}"


def _parse_header(token: str) -> tuple[str, int | None]:
    if YEAR_SEP in token:
        name, _, year = token.partition(YEAR_SEP)
        try:
            return name, int(year)
        except ValueError:
            raise DataError(f"line 1: bad year suffix in column {token!r}") from None
    return token, None


def ingest_wide_csv(path: str | Path, codebook: Codebook) -> WideTable:
    path = Path(path)
    expected = codebook.wide_columns()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file, header row required")
        keys = [_parse_header(h.strip()) for h in header]
        if len(set(keys)) != len(keys):
            raise DataError("line 1: duplicate column in header")
        unknown = [wide_header_name(*k) for k in keys if k not in expected]
        if unknown:
            raise DataError(f"line 1: unknown column(s): {', '.join(unknown)}")
        absent = [wide_header_name(*k) for k in expected if k not in keys]
        if absent:
            raise DataError(f"line 1: missing required column(s): {', '.join(absent)}")
        position = {k: i for i, k in enumerate(keys)}
        specs = [codebook[name] for name, _ in expected]
        rows: list[list[float]] = []
        seen: set[int] = set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(keys):
                raise DataError(f"line {lineno}: expected {len(keys)} fields, got {len(row)}")
            values = []
            for key, spec in zip(expected, specs):
                tok = row[position[key]].strip()
                if tok == "":
                    values.append(math.nan)
                    continue
                try:
                    v = int(tok)
                except ValueError:
                    raise DataError(
                        f"line {lineno}: column {wide_header_name(*key)!r}: non-integer token {tok!r}"
                    ) from None
                if v >= 0 and spec.role != "id" and not spec.is_valid(v):
                    raise DataError(f"line {lineno}: column {wide_header_name(*key)!r}: value {v} outside valid_values")
                values.append(float(v))
            if math.isnan(values[0]):
                raise DataError(f"line {lineno}: empty individual id")
            ind = int(values[0])
            if ind in seen:
                raise DataError(f"line {lineno}: duplicate individual id {ind}")
            seen.add(ind)
            rows.append(values)
    data = np.array(rows, dtype=float).reshape(len(rows), len(expected))
    ids = _freeze(data[:, 0].astype(np.int64))
    cells = {key: _freeze(data[:, j].copy()) for j, key in enumerate(expected) if j > 0}
    return WideTable(codebook, ids, cells)


def write_wide_csv(wide: WideTable, path: str | Path) -> None:
    cols = wide.codebook.wide_columns()
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([wide_header_name(*k) for k in cols])
        for i, ind in enumerate(wide.ids):
            w.writerow([int(ind)] + [format_cell(wide.cells[k][i]) for k in cols[1:]])


def format_cell(v: float) -> str:
    if math.isnan(v):
        return ""
    if float(v).is_integer():
        return str(int(v))
    return repr(float(v))


@dataclass(frozen=True)
class LongTable:
    """One row per (individual, year) observation."""

    codebook: Codebook
    ids: np.ndarray
    years: np.ndarray
    columns: dict[str, np.ndarray]
    target_binned: bool = False

    def __post_init__(self):
        n = len(self.ids)
        if len(self.years) != n or any(len(c) != n for c in self.columns.values()):
            raise DataError("long table columns have unequal lengths")
        keys = set(zip(self.ids.tolist(), self.years.tolist()))
        if len(keys) != n:
            raise DataError("duplicate (individual id, year) rows")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def target(self) -> np.ndarray:
        return self.columns[self.codebook.target.name]

    def take(self, index: np.ndarray | Sequence[int]) -> "LongTable":
        index = np.asarray(index)
        return self.replace(
            ids=self.ids[index],
            years=self.years[index],
            columns={k: v[index] for k, v in self.columns.items()},
        )

    def replace(self, **changes) -> "LongTable":
        fields = {
            "codebook": self.codebook,
            "ids": self.ids,
            "years": self.years,
            "columns": self.columns,
            "target_binned": self.target_binned,
        }
        fields.update(changes)
        fields["ids"] = _freeze(np.array(fields["ids"], copy=True))
        fields["years"] = _freeze(np.array(fields["years"], copy=True))
        fields["columns"] = {k: _freeze(np.array(v, dtype=float, copy=True)) for k, v in fields["columns"].items()}
        return LongTable(**fields)

    def with_column(self, name: str, values: np.ndarray) -> "LongTable":
        cols = dict(self.columns)
        cols[name] = values
        return self.replace(columns=cols)

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.codebook.id.name, self.codebook.time_name, *self.columns])
            cols = list(self.columns.values())
            for i in range(len(self)):
                w.writerow([int(self.ids[i]), int(self.years[i]), *(format_cell(c[i]) for c in cols)])


def unroll_longitudinal(wide: WideTable) -> LongTable:
    """Turn each individual's N declared years into N observation rows.

    Time-invariant variables are copied into every year row; a repeated
    variable that has no column for some year contributes absent cells there.
    """
    cb = wide.codebook
    years = cb.years
    if not years:
        raise DataError("codebook declares no repeated-measure variable; nothing to unroll")
    n, k = len(wide), len(years)
    columns = {}
    for v in cb.data_variables:
        if v.repeated:
            block = np.full((n, k), np.nan)
            for j, y in enumerate(years):
                if y in v.year_suffixes:
                    block[:, j] = wide.cells[(v.name, y)]
            columns[v.name] = block.ravel()
        else:
            columns[v.name] = np.repeat(wide.cells[(v.name, None)], k)
    ids = np.repeat(wide.ids, k)
    yrs = np.tile(np.asarray(years, dtype=np.int64), n)
    return LongTable(cb, ids, yrs, {}).replace(columns=columns)


def filter_invalid_target(long: LongTable) -> tuple[LongTable, int]:
    """Drop rows whose target is absent or negative."""
    target = long.target
    with np.errstate(invalid="ignore"):
        keep = np.flatnonzero(target >= 0)
    return long.take(keep), len(long) - len(keep)


def mark_missing(long: LongTable) -> LongTable:
    """Replace negative or declared-missing feature codes by the absent marker."""
    cols = dict(long.columns)
    for v in long.codebook.features:
        col = cols[v.name]
        codes = np.array(sorted(v.missing_codes), dtype=float)
        with np.errstate(invalid="ignore"):
            bad = (col < 0) | np.isin(col, codes)
        if bad.any():
            col = col.copy()
            col[bad] = np.nan
            cols[v.name] = col
    return long.replace(columns=cols)


def balanced_year_sample(long: LongTable, total: int, seed: int) -> LongTable:
    """Sample ``total`` rows with an equal share from every year present.

    Rows are drawn uniformly without replacement within each year and the
    result keeps the input row order.
    """
    years = np.unique(long.years)
    if len(years) == 0:
        raise DataError("cannot sample from an empty table")
    if total % len(years):
        raise DataError(f"total {total} is not divisible by the number of years ({len(years)})")
    per_year = total // len(years)
    rng = np.random.default_rng(seed)
    picked = []
    for y in years:
        rows = np.flatnonzero(long.years == y)
        if len(rows) < per_year:
            raise DataError(f"year {y} has {len(rows)} rows, {per_year} needed")
        picked.append(rng.choice(rows, size=per_year, replace=False))
    return long.take(np.sort(np.concatenate(picked)))
