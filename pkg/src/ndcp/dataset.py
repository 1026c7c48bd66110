"""Binary-labelled datasets: CSV ingestion, seeded splits and source partitions."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import (
    DegenerateSplit,
    EmptyFile,
    InfeasiblePartition,
    MalformedRow,
    MissingColumn,
    NonBinaryLabel,
)

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "?", "NA", "NaN", "nan", "null"})

Encoding = Literal["onehot", "ordinal"]
Scheme = Literal["pooled", "equal", "random"]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FeatureEncoder:
    """Column layout learned from a training CSV, reusable on query files."""

    columns: tuple[str, ...]
    # None for numeric columns, sorted level tuple for categorical ones
    levels: tuple[tuple[str, ...] | None, ...]
    encoding: Encoding = "onehot"

    @property
    def feature_names(self) -> list[str]:
        names = []
        for col, lv in zip(self.columns, self.levels):
            if lv is None or self.encoding == "ordinal":
                names.append(col)
            else:
                names.extend(f"{col}={level}" for level in lv)
        return names

    def encode_row(self, cells: Sequence[str], row_index: int = -1) -> list[float]:
        out: list[float] = []
        for cell, lv in zip(cells, self.levels):
            if lv is None:
                try:
                    out.append(float(cell))
                except ValueError:
                    raise MalformedRow(row_index, f"non-numeric value {cell!r}") from None
            elif self.encoding == "ordinal":
                # unseen levels map to -1
                out.append(float(lv.index(cell)) if cell in lv else -1.0)
            else:
                out.extend(1.0 if cell == level else 0.0 for level in lv)
        return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable binary-labelled examples.

    ``row_ids`` carries the original row positions so that splits and
    partitions can be audited by index bookkeeping.
    """

    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple[str, ...] = ()
    row_ids: np.ndarray | None = None
    encoder: FeatureEncoder | None = field(default=None, repr=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if X.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError("labels must be a vector with one entry per row")
        if X.shape[0] < 1 or X.shape[1] < 1:
            raise ValueError("a dataset needs at least one row and one column")
        if not np.all((y == 0) | (y == 1)):
            raise NonBinaryLabel("labels must be 0 or 1")
        names = tuple(self.feature_names) or tuple(f"x{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ValueError("feature_names length does not match column count")
        ids = np.arange(X.shape[0]) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        if ids.shape != y.shape:
            raise ValueError("row_ids must have one entry per row")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(y.astype(np.int8)))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "row_ids", _frozen(ids.astype(np.int64)))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: Iterable[int]) -> "Dataset":
        idx = np.asarray(list(idx) if not isinstance(idx, np.ndarray) else idx, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.feature_names,
            self.row_ids[idx],
            self.encoder,
        )

    def class_counts(self) -> tuple[int, int]:
        ones = int(self.labels.sum())
        return self.n - ones, ones


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")


@dataclass(frozen=True)
class PartitionSpec:
    scheme: Scheme = "pooled"
    k: int = 1
    min_size: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in ("pooled", "equal", "random"):
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        if self.k < 1 or self.min_size < 1:
            raise ValueError("k and min_size must be positive")
        if self.scheme == "pooled" and self.k != 1:
            raise ValueError("pooled partitions have exactly one source")


def load_csv(
    path: str | Path,
    label_column: str,
    categorical_encoding: Encoding = "onehot",
) -> Dataset:
    """Read a headed CSV into a :class:`Dataset`.

    Raw labels are mapped to {0, 1} by lexicographic order. Columns whose
    every non-missing cell parses as a float are numeric; the rest are
    categorical and expanded by ``categorical_encoding``. Rows with a missing
    cell are dropped (and counted in the log).
    """
    if categorical_encoding not in ("onehot", "ordinal"):
        raise ValueError(f"unknown encoding {categorical_encoding!r}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]  # blank lines
    if not rows:
        raise EmptyFile(f"{path}: no header")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise EmptyFile(f"{path}: no data rows")
    if label_column not in header:
        raise MissingColumn(label_column)
    width = len(header)
    label_at = header.index(label_column)

    kept: list[list[str]] = []
    dropped = 0
    for i, row in enumerate(body):
        if len(row) != width:
            raise MalformedRow(i, f"expected {width} fields, found {len(row)}")
        cells = [c.strip() for c in row]
        if any(c in MISSING_TOKENS for c in cells):
            dropped += 1
            continue
        kept.append(cells)
    if dropped:
        log.warning("%s: dropped %d row(s) with missing values", path, dropped)
    if not kept:
        raise EmptyFile(f"{path}: every row has missing values")

    raw_labels = [r[label_at] for r in kept]
    classes = sorted(set(raw_labels))
    if len(classes) != 2:
        raise NonBinaryLabel(f"label column {label_column!r} has {len(classes)} distinct values")
    y = np.array([classes.index(v) for v in raw_labels], dtype=np.int8)

    feat_cols = [j for j in range(width) if j != label_at]
    levels: list[tuple[str, ...] | None] = []
    for j in feat_cols:
        values = [r[j] for r in kept]
        if all(_is_float(v) for v in values):
            levels.append(None)
        else:
            levels.append(tuple(sorted(set(values))))
    encoder = FeatureEncoder(tuple(header[j] for j in feat_cols), tuple(levels), categorical_encoding)
    X = np.array(
        [encoder.encode_row([r[j] for j in feat_cols], i) for i, r in enumerate(kept)],
        dtype=np.float64,
    ).reshape(len(kept), -1)
    return Dataset(X, y, tuple(encoder.feature_names), encoder=encoder)


def load_query_csv(path: str | Path, encoder: FeatureEncoder | None = None,
                   drop_column: str | None = None) -> np.ndarray:
    """Read query objects. Without an encoder every column must be numeric."""
    with open(path, newline="", encoding="utf-8-sig") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise EmptyFile(f"{path}: no header")
    header = [h.strip() for h in rows[0]]
    if encoder is not None:
        missing = [c for c in encoder.columns if c not in header]
        if missing:
            raise MissingColumn(missing[0])
        take = [header.index(c) for c in encoder.columns]
    else:
        take = [j for j, h in enumerate(header) if h != drop_column]
    out = []
    for i, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise MalformedRow(i, f"expected {len(header)} fields, found {len(row)}")
        cells = [row[j].strip() for j in take]
        if encoder is not None:
            out.append(encoder.encode_row(cells, i))
        else:
            try:
                out.append([float(c) for c in cells])
            except ValueError:
                raise MalformedRow(i, "query features must be numeric") from None
    if not out:
        raise EmptyFile(f"{path}: no data rows")
    return np.array(out, dtype=np.float64)


def write_csv(path: str | Path, data: Dataset, label_column: str = "label") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*data.feature_names, label_column])
        for x, y in zip(data.features, data.labels):
            w.writerow([repr(float(v)) for v in x] + [int(y)])


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_test_split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Seeded random split; the train side gets round(train_fraction * n) rows."""
    n_train = _round_half_up(spec.train_fraction * data.n)
    if n_train < 1 or n_train > data.n - 1:
        raise DegenerateSplit(f"fraction {spec.train_fraction} of n={data.n} leaves an empty side")
    perm = np.random.default_rng(spec.seed).permutation(data.n)
    return data.subset(np.sort(perm[:n_train])), data.subset(np.sort(perm[n_train:]))


def equal_sizes(n: int, k: int) -> list[int]:
    base, extra = divmod(n, k)
    return [base + (1 if i < extra else 0) for i in range(k)]


def random_sizes(n: int, k: int, min_size: int, rng: np.random.Generator) -> list[int]:
    """Uniform draw from the compositions of ``n`` into ``k`` parts, each >= ``min_size``.

    Stars and bars: k-1 distinct bar positions among slack + k - 1 slots.
    """
    slack = n - k * min_size
    if slack < 0:
        raise InfeasiblePartition(f"{k} parts of at least {min_size} rows need n >= {k * min_size}, got {n}")
    bars = np.sort(rng.choice(slack + k - 1, size=k - 1, replace=False)) if k > 1 else np.empty(0, int)
    edges = np.concatenate(([-1], bars, [slack + k - 1]))
    return [int(d) - 1 + min_size for d in np.diff(edges)]


def partition(data: Dataset, spec: PartitionSpec) -> list[Dataset]:
    """Split ``data`` into disjoint sources according to ``spec``."""
    if spec.scheme == "pooled":
        return [data]
    rng = np.random.default_rng(spec.seed)
    if spec.scheme == "equal":
        if spec.k > data.n:
            raise InfeasiblePartition(f"cannot make {spec.k} non-empty parts from {data.n} rows")
        sizes = equal_sizes(data.n, spec.k)
    else:
        sizes = random_sizes(data.n, spec.k, spec.min_size, rng)
    perm = rng.permutation(data.n)
    bounds = np.cumsum([0, *sizes])
    return [data.subset(np.sort(perm[a:b])) for a, b in zip(bounds[:-1], bounds[1:])]


def make_two_gaussians(n: int, seed: int, n_features: int = 2, separation: float = 2.0,
                       balance: float = 0.5) -> Dataset:
    """Synthetic binary data: class 0 around -mu, class 1 around +mu, unit variance.

    ``separation`` is the distance between the two class means.
    """
    rng = np.random.default_rng(seed)
    y = (rng.random(n) < balance).astype(np.int8)
    mu = np.full(n_features, separation / (2.0 * math.sqrt(n_features)))
    X = rng.standard_normal((n, n_features)) + np.where(y[:, None] == 1, mu, -mu)
    return Dataset(X, y)
