"""Seeded random forest with Gini splits, used as the nonconformity basis.

Trees are grown on bootstrap resamples; each node searches a random subset
of features for the axis-aligned threshold (midpoint between consecutive
distinct values) that minimises weighted Gini impurity. Leaves store the
fraction of class-1 rows they received, and the forest score is the mean
leaf fraction over trees, so scores always lie in [0, 1].

All randomness comes from a splitmix64 stream per tree, keyed by
``(config.seed, tree index)``. Builds are therefore bit-reproducible and
independent of the order in which trees are grown.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
from numba import njit

from .dataset import Dataset
from .errors import DimensionMismatch, EmptyDataset
from .seeding import derive_seed

FeaturesPerSplit = Union[str, int]

_LEAF = -1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 16
    min_leaf: int = 2
    features_per_split: FeaturesPerSplit = "sqrt"
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        fps = self.features_per_split
        if isinstance(fps, str):
            if fps not in ("sqrt", "all"):
                raise ValueError(f"features_per_split must be 'sqrt', 'all' or an int, got {fps!r}")
        elif isinstance(fps, bool) or not isinstance(fps, int) or fps < 1:
            raise ValueError("fixed features_per_split must be a positive int")

    def mtry(self, p: int) -> int:
        fps = self.features_per_split
        if fps == "sqrt":
            return max(1, int(math.isqrt(p)))
        if fps == "all":
            return p
        return min(int(fps), p)


@dataclass(frozen=True, eq=False)
class Tree:
    """Array-encoded binary tree. ``feature[i] == -1`` marks a leaf.

    Internal nodes send ``x`` left when ``x[feature] <= threshold``.
    ``value`` holds the class-1 fraction (meaningful at leaves).
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def node_count(self) -> int:
        return len(self.feature)

    def leaf_values(self) -> np.ndarray:
        return self.value[self.feature == _LEAF]


@dataclass(frozen=True, eq=False)
class TrainedForest:
    trees: tuple[Tree, ...]
    config: ForestConfig
    n_features: int

    @cached_property
    def _packed(self):
        width = max(t.node_count for t in self.trees)
        shape = (len(self.trees), width)
        feature = np.full(shape, _LEAF, dtype=np.int32)
        threshold = np.zeros(shape)
        left = np.zeros(shape, dtype=np.int32)
        right = np.zeros(shape, dtype=np.int32)
        value = np.zeros(shape)
        for i, t in enumerate(self.trees):
            c = t.node_count
            feature[i, :c] = t.feature
            threshold[i, :c] = t.threshold
            left[i, :c] = t.left
            right[i, :c] = t.right
            value[i, :c] = t.value
        return feature, threshold, left, right, value

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Scores for every row of ``X``."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(
                f"forest expects {self.n_features} features, got shape {X.shape}")
        return _predict(X, *self._packed)


# ---------------------------------------------------------------------------
# numba kernels

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _next_u64(state):
    state[0] += _GOLDEN
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _randbelow(state, n):
    u = np.float64(_next_u64(state) >> np.uint64(11)) * _INV53
    k = np.int64(u * n)
    return k if k < n else n - 1


@njit(cache=True)
def _grow_tree(X, y, state, max_depth, min_leaf, mtry,
               feature, threshold, left, right, value):
    n, p = X.shape
    idx = np.empty(n, dtype=np.int64)
    for i in range(n):
        idx[i] = _randbelow(state, n)
    buf = np.empty(n, dtype=np.int64)
    feats = np.arange(p)
    vals = np.empty(n)

    st_node = np.empty(n + 1, dtype=np.int64)
    st_lo = np.empty(n + 1, dtype=np.int64)
    st_hi = np.empty(n + 1, dtype=np.int64)
    st_depth = np.empty(n + 1, dtype=np.int64)
    top = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    st_depth[0] = 0
    top = 1
    count = 1

    while top > 0:
        top -= 1
        node = st_node[top]
        lo = st_lo[top]
        hi = st_hi[top]
        depth = st_depth[top]
        m = hi - lo
        c1 = 0
        for i in range(lo, hi):
            c1 += y[idx[i]]
        value[node] = c1 / m
        feature[node] = -1
        if c1 == 0 or c1 == m or depth >= max_depth or m < 2 * min_leaf:
            continue

        # random feature order; the first mtry form the candidate subset,
        # later ones are consulted only while no valid split has been found
        for j in range(p - 1, 0, -1):
            r = _randbelow(state, j + 1)
            tmp = feats[j]
            feats[j] = feats[r]
            feats[r] = tmp

        best_score = -1.0
        best_f = -1
        best_thr = 0.0
        for jj in range(p):
            if jj >= mtry and best_f >= 0:
                break
            f = feats[jj]
            for i in range(m):
                vals[i] = X[idx[lo + i], f]
            order = np.argsort(vals[:m])
            nl = 0
            l1 = 0
            for i in range(m - 1):
                nl += 1
                l1 += y[idx[lo + order[i]]]
                a = vals[order[i]]
                b = vals[order[i + 1]]
                if a == b:
                    continue
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                r1 = c1 - l1
                l0 = nl - l1
                r0 = nr - r1
                # maximising this is minimising the weighted Gini impurity
                score = (l1 * l1 + l0 * l0) / nl + (r1 * r1 + r0 * r0) / nr
                thr = 0.5 * (a + b)
                if thr >= b:
                    thr = a
                if score > best_score or (score == best_score and (
                        f < best_f or (f == best_f and thr < best_thr))):
                    best_score = score
                    best_f = f
                    best_thr = thr
        if best_f < 0:
            continue

        nl = 0
        nr = 0
        for i in range(lo, hi):
            r = idx[i]
            if X[r, best_f] <= best_thr:
                idx[lo + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        for i in range(nr):
            idx[lo + nl + i] = buf[i]

        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = count
        right[node] = count + 1
        st_node[top] = count + 1
        st_lo[top] = lo + nl
        st_hi[top] = hi
        st_depth[top] = depth + 1
        top += 1
        st_node[top] = count
        st_lo[top] = lo
        st_hi[top] = lo + nl
        st_depth[top] = depth + 1
        top += 1
        count += 2
    return count


@njit(cache=True)
def _grow_forest(X, y, seeds, max_depth, min_leaf, mtry):
    n = X.shape[0]
    width = 2 * n - 1
    t = seeds.shape[0]
    feature = np.full((t, width), -1, dtype=np.int32)
    threshold = np.zeros((t, width))
    left = np.zeros((t, width), dtype=np.int32)
    right = np.zeros((t, width), dtype=np.int32)
    value = np.zeros((t, width))
    counts = np.empty(t, dtype=np.int64)
    state = np.empty(1, dtype=np.uint64)
    for k in range(t):
        state[0] = seeds[k]
        counts[k] = _grow_tree(X, y, state, max_depth, min_leaf, mtry,
                               feature[k], threshold[k], left[k], right[k], value[k])
    return feature, threshold, left, right, value, counts


@njit(cache=True)
def _predict(X, feature, threshold, left, right, value):
    n = X.shape[0]
    t = feature.shape[0]
    out = np.empty(n)
    for i in range(n):
        s = 0.0
        for k in range(t):
            node = 0
            while feature[k, node] >= 0:
                if X[i, feature[k, node]] <= threshold[k, node]:
                    node = left[k, node]
                else:
                    node = right[k, node]
            s += value[k, node]
        out[i] = s / t
    return out


# ---------------------------------------------------------------------------


def tree_seeds(config: ForestConfig) -> np.ndarray:
    return np.array([derive_seed(config.seed, t) for t in range(config.n_trees)], dtype=np.uint64)


def train_forest(data: Dataset, config: ForestConfig) -> TrainedForest:
    if data.n == 0:
        raise EmptyDataset("cannot train a forest on an empty dataset")
    X = np.ascontiguousarray(data.features, dtype=np.float64)
    y = np.ascontiguousarray(data.labels, dtype=np.int64)
    feature, threshold, left, right, value, counts = _grow_forest(
        X, y, tree_seeds(config), config.max_depth, config.min_leaf, config.mtry(data.p))
    trees = tuple(
        Tree(feature[k, :c], threshold[k, :c], left[k, :c], right[k, :c], value[k, :c])
        for k, c in enumerate(counts)
    )
    return TrainedForest(trees, config, data.p)


def predict_score(forest: TrainedForest, x) -> float:
    """Forest score in [0, 1] for a single feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != forest.n_features:
        raise DimensionMismatch(f"expected {forest.n_features} features, got shape {x.shape}")
    return float(forest.predict(x[None, :])[0])
