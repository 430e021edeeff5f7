"""Target binning, nominal recoding, rank correlation and design-matrix encoding."""

from __future__ import annotations

import bisect
import csv
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import Codebook, LongTable, format_cell
from .errors import DataError

N_CLASSES = 3
DEFAULT_BIN_EDGES = (50_000.0, 100_000.0)
RECODE_HEADER = ["low", "high", "out_category"]
DEFAULT_KEEP = (
    "degree",
    "residential_father_grade",
    "residential_mother_grade",
)


def bin_target(income: float, edges: Sequence[float] = DEFAULT_BIN_EDGES) -> int:
    """Class label 1..len(edges)+1; each edge belongs to the class above it."""
    if not income >= 0:
        raise ValueError(f"income must be a non-negative number, got {income}")
    return bisect.bisect_right(edges, income) + 1


def bin_targets(long: LongTable) -> LongTable:
    target = long.codebook.target
    edges = np.asarray(target.bin_edges or DEFAULT_BIN_EDGES)
    col = long.target
    if np.isnan(col).any() or (col < 0).any():
        raise DataError("target has absent or negative values; filter invalid targets first")
    labels = np.searchsorted(edges, col, side="right") + 1
    return long.with_column(target.name, labels.astype(float)).replace(target_binned=True)


@dataclass(frozen=True)
class RecodeMap:
    name: str
    ranges: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        ranges = sorted(self.ranges)
        for lo, hi, cat in ranges:
            if lo > hi:
                raise DataError(f"recode map {self.name!r}: empty range {lo}-{hi}")
            if cat < 1:
                raise DataError(f"recode map {self.name!r}: out_category must be >= 1, got {cat}")
        for (_, hi, _), (lo, _, _) in zip(ranges, ranges[1:]):
            if lo <= hi:
                raise DataError(f"recode map {self.name!r}: overlapping ranges at {lo}")
        object.__setattr__(self, "ranges", tuple(ranges))
        object.__setattr__(self, "_lows", [r[0] for r in ranges])

    @property
    def categories(self) -> list[int]:
        return sorted({r[2] for r in self.ranges})

    def lookup(self, raw: float) -> float:
        i = bisect.bisect_right(self._lows, raw) - 1
        if i >= 0 and raw <= self.ranges[i][1]:
            return float(self.ranges[i][2])
        return np.nan


def recode_nominal(raw: float, recode: RecodeMap) -> float:
    """Map a raw code onto its category, or NaN (absent) if no range covers it."""
    if raw < 0:
        raise ValueError(f"raw code must be non-negative, got {raw}")
    return recode.lookup(raw)


def load_recode_map(path: str | Path, name: str | None = None) -> RecodeMap:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != RECODE_HEADER:
            raise DataError(f"{path}: line 1: recode header must be {','.join(RECODE_HEADER)}")
        ranges = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                lo, hi, cat = (int(c) for c in row)
            except ValueError:
                raise DataError(f"{path}: line {lineno}: expected three integers") from None
            ranges.append((lo, hi, cat))
    return RecodeMap(name or path.stem, tuple(ranges))


def find_recode_maps(codebook: Codebook, search: Iterable[str | Path] = ()) -> dict[str, RecodeMap]:
    """Resolve every ``recode_ref`` to ``<ref>.csv``.

    Looks in ``search`` first, then next to the codebook, then in the
    maps shipped with the package.
    """
    dirs = [Path(d) for d in search]
    if codebook.source is not None:
        dirs.append(codebook.source.parent)
    maps = {}
    for v in codebook.features:
        ref = v.recode_ref
        if ref is None or ref in maps:
            continue
        for d in dirs:
            if (d / f"{ref}.csv").exists():
                maps[ref] = load_recode_map(d / f"{ref}.csv", ref)
                break
        else:
            shipped = resources.files("incomepanel.data").joinpath(f"{ref}.csv")
            if not shipped.is_file():
                raise DataError(f"recode map {ref!r} not found")
            with resources.as_file(shipped) as p:
                maps[ref] = load_recode_map(p, ref)
    return maps


def apply_recodes(long: LongTable, maps: dict[str, RecodeMap]) -> tuple[LongTable, dict[str, int]]:
    """Recode every feature with a ``recode_ref``; returns uncovered-code counts per variable."""
    cols = dict(long.columns)
    uncovered = {}
    for v in long.codebook.features:
        if v.recode_ref is None:
            continue
        m = maps[v.recode_ref]
        raw = cols[v.name]
        out = np.array([np.nan if np.isnan(r) else recode_nominal(r, m) for r in raw])
        uncovered[v.name] = int(np.sum(np.isnan(out) & ~np.isnan(raw)))
        cols[v.name] = out
    return long.replace(columns=cols), uncovered


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties; NaN when undefined.

    Pairs with an absent value on either side are dropped first.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError("x and y must have the same length")
    ok = ~(np.isnan(x) | np.isnan(y))
    if ok.sum() < 2:
        return np.nan
    rx = rankdata(x[ok])
    ry = rankdata(y[ok])
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = dx @ dx
    syy = dy @ dy
    if sxx == 0 or syy == 0:
        return np.nan
    return float(np.clip((dx @ dy) / np.sqrt(sxx * syy), -1.0, 1.0))


@dataclass(frozen=True)
class CorrelationMatrix:
    names: tuple[str, ...]
    rho: np.ndarray

    def subset(self, names: Sequence[str]) -> "CorrelationMatrix":
        idx = [self.names.index(n) for n in names]
        return CorrelationMatrix(tuple(names), self.rho[np.ix_(idx, idx)])

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variable", *self.names])
            for name, row in zip(self.names, self.rho):
                w.writerow([name, *(format_cell(v) for v in row)])


def correlation_matrix(long: LongTable, names: Sequence[str] | None = None) -> CorrelationMatrix:
    """Pairwise-complete Spearman matrix over the table's variables.

    Nominal variables enter through their integer codes, which is a
    heuristic for unordered categories.
    """
    names = tuple(names or long.names)
    if len(names) < 2:
        raise ValueError("need at least two variables")
    k = len(names)
    rho = np.full((k, k), np.nan)
    for i in range(k):
        xi = long.column(names[i])
        if np.sum(~np.isnan(xi)) >= 2 and np.nanvar(xi) > 0:
            rho[i, i] = 1.0
        for j in range(i + 1, k):
            rho[i, j] = rho[j, i] = spearman(xi, long.column(names[j]))
    return CorrelationMatrix(names, rho)


def prune_correlated(m: CorrelationMatrix, threshold: float = 0.7, keep_policy: Sequence[str] = DEFAULT_KEEP) -> list[str]:
    """Keep one variable per group linked by ``|rho| >= threshold``.

    Groups are connected components of the threshold graph. The survivor is
    the first group member named in ``keep_policy``, else the first in
    matrix order. Output is in matrix order.
    """
    if not 0 < threshold <= 1:
        raise ValueError("threshold must lie in (0, 1]")
    k = len(m.names)
    with np.errstate(invalid="ignore"):
        linked = np.abs(m.rho) >= threshold
    np.fill_diagonal(linked, False)
    component = [-1] * k
    groups = []
    for start in range(k):
        if component[start] >= 0:
            continue
        members, queue = [], deque([start])
        component[start] = len(groups)
        while queue:
            i = queue.popleft()
            members.append(i)
            for j in np.flatnonzero(linked[i]):
                if component[j] < 0:
                    component[j] = len(groups)
                    queue.append(j)
        groups.append(sorted(members))
    rank = {name: r for r, name in enumerate(keep_policy)}
    kept = set()
    for members in groups:
        preferred = [i for i in members if m.names[i] in rank]
        if preferred:
            kept.add(min(preferred, key=lambda i: rank[m.names[i]]))
        else:
            kept.add(members[0])
    return [m.names[i] for i in sorted(kept)]


@dataclass(frozen=True)
class ColumnDescriptor:
    source: str
    encoding: str  # "numeric", "code", "onehot" or "missing"
    level: int | None = None

    @property
    def label(self) -> str:
        if self.encoding == "onehot":
            return f"{self.source}.{self.level}"
        if self.encoding == "missing":
            return f"{self.source}.missing"
        return self.source


@dataclass(frozen=True)
class DesignMatrix:
    columns: tuple[ColumnDescriptor, ...]
    values: np.ndarray
    missing_mask: np.ndarray
    targets: np.ndarray
    ids: np.ndarray
    years: np.ndarray
    n_classes: int = N_CLASSES

    def __len__(self) -> int:
        return len(self.targets)

    @property
    def variables(self) -> list[str]:
        seen = []
        for c in self.columns:
            if c.source not in seen:
                seen.append(c.source)
        return seen

    def take(self, index) -> "DesignMatrix":
        index = np.asarray(index)
        return DesignMatrix(
            self.columns,
            self.values[index],
            self.missing_mask[index],
            self.targets[index],
            self.ids[index],
            self.years[index],
            self.n_classes,
        )

    def drop_variables(self, names: Iterable[str]) -> "DesignMatrix":
        names = set(names)
        keep = [j for j, c in enumerate(self.columns) if c.source not in names]
        return DesignMatrix(
            tuple(self.columns[j] for j in keep),
            self.values[:, keep],
            self.missing_mask[:, keep],
            self.targets,
            self.ids,
            self.years,
            self.n_classes,
        )

    def write_csv(self, path: str | Path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "year", *(c.label for c in self.columns), "class"])
            for i in range(len(self)):
                w.writerow(
                    [int(self.ids[i]), int(self.years[i]), *(format_cell(v) for v in self.values[i]), int(self.targets[i])]
                )


def nominal_levels(long: LongTable, name: str) -> list[int]:
    col = long.column(name)
    return sorted(int(v) for v in np.unique(col[~np.isnan(col)]))


def encode_design_matrix(
    long: LongTable,
    kept: Iterable[str],
    one_hot: bool = True,
    missing_level: bool = False,
    levels: dict[str, Sequence[int]] | None = None,
) -> DesignMatrix:
    """Encode the kept features of a cleaned, target-binned table.

    Nominal levels come from ``levels`` when given, otherwise from the
    values observed in ``long``. Numeric columns keep NaN for absent cells
    and flag them in ``missing_mask``; one-hot blocks are all-zero for an
    absent cell unless a missing-level column is requested.
    """
    if not long.target_binned:
        raise DataError("target must be binned before encoding")
    cb = long.codebook
    kept = set(kept)
    features = {v.name for v in cb.features}
    bad = sorted(kept - features)
    if bad:
        raise DataError(f"not a feature of this table: {', '.join(bad)}")
    descriptors: list[ColumnDescriptor] = []
    blocks: list[np.ndarray] = []
    masks: list[np.ndarray] = []
    n = len(long)
    for v in cb.features:
        if v.name not in kept:
            continue
        col = long.column(v.name)
        absent = np.isnan(col)
        if v.kind == "numeric" or not one_hot:
            descriptors.append(ColumnDescriptor(v.name, "numeric" if v.kind == "numeric" else "code"))
            blocks.append(col[:, None])
            masks.append(absent[:, None])
            continue
        lv = list(levels[v.name]) if levels and v.name in levels else nominal_levels(long, v.name)
        block = (col[:, None] == np.asarray(lv, dtype=float)[None, :]).astype(float)
        descriptors.extend(ColumnDescriptor(v.name, "onehot", level) for level in lv)
        if missing_level:
            descriptors.append(ColumnDescriptor(v.name, "missing"))
            block = np.hstack([block, absent[:, None].astype(float)])
        blocks.append(block)
        masks.append(np.zeros(block.shape, dtype=bool))
    values = np.hstack(blocks) if blocks else np.empty((n, 0))
    mask = np.hstack(masks) if masks else np.empty((n, 0), dtype=bool)
    return DesignMatrix(
        tuple(descriptors),
        values,
        mask,
        long.target.astype(np.int64),
        np.asarray(long.ids),
        np.asarray(long.years),
    )


def decode_nominal(dm: DesignMatrix, name: str) -> np.ndarray:
    """Inverse of the one-hot encoding for one variable (NaN for absent)."""
    idx = [j for j, c in enumerate(dm.columns) if c.source == name and c.encoding == "onehot"]
    if not idx:
        raise KeyError(name)
    block = dm.values[:, idx]
    levels = np.array([dm.columns[j].level for j in idx], dtype=float)
    out = np.full(len(dm), np.nan)
    hit = block.sum(axis=1) > 0
    out[hit] = levels[np.argmax(block[hit], axis=1)]
    return out


def class_distribution(targets: Sequence[int], n_classes: int = N_CLASSES) -> tuple[float, ...]:
    targets = np.asarray(targets, dtype=np.int64)
    if targets.size == 0:
        raise ValueError("class_distribution of an empty label vector")
    counts = np.bincount(targets - 1, minlength=n_classes)[:n_classes]
    return tuple(float(c) for c in counts / targets.size)
