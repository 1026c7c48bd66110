"""Transductive Mondrian conformal prediction on top of the random forest."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal, NamedTuple, Sequence

import numpy as np

from .dataset import Dataset
from .errors import DimensionMismatch, EmptyCategory, EmptyDataset
from .forest import ForestConfig, train_forest
from .seeding import derive_seed, derive_uniform

Direction = Literal["conventional", "paper_literal"]


class PValuePair(NamedTuple):
    """Conformal p-values for the two hypothesised labels; ``pair[y]`` is p_y."""

    p0: float
    p1: float


class PredictionRegion(NamedTuple):
    contains0: bool
    contains1: bool
    epsilon: float

    def __contains__(self, label) -> bool:
        return bool(self.contains1 if label == 1 else self.contains0 if label == 0 else False)

    @property
    def labels(self) -> frozenset[int]:
        return frozenset(y for y, inside in ((0, self.contains0), (1, self.contains1)) if inside)

    @property
    def size(self) -> int:
        return int(self.contains0) + int(self.contains1)


@dataclass(frozen=True)
class TcpConfig:
    forest: ForestConfig = field(default_factory=ForestConfig)
    score_direction: Direction = "conventional"
    smoothing_seed: int = 0

    def __post_init__(self):
        if self.score_direction not in ("conventional", "paper_literal"):
            raise ValueError(f"unknown score direction {self.score_direction!r}")

    @classmethod
    def from_seed(cls, seed: int, **forest_kwargs) -> "TcpConfig":
        """Forest and smoothing seeds both derived from one seed."""
        return cls(
            forest=ForestConfig(seed=derive_seed(seed, "forest"), **forest_kwargs),
            smoothing_seed=derive_seed(seed, "tau"),
        )


def nonconformity(score, label: int, direction: Direction = "conventional"):
    """Strangeness of an example with forest score ``score`` and ``label``.

    ``score`` is the forest's class-1 probability. The conventional direction
    gives alpha = 1 - P(label); ``paper_literal`` swaps the two assignments.
    Works elementwise on arrays.
    """
    if direction == "conventional":
        return score if label == 0 else 1.0 - score
    if direction == "paper_literal":
        return 1.0 - score if label == 0 else score
    raise ValueError(f"unknown score direction {direction!r}")


def smoothed_mondrian_pvalue(category_scores: Sequence[float], test_alpha: float, tau: float) -> float:
    """(#{alpha > test} + tau * #{alpha == test}) / |category|.

    ``category_scores`` must already contain the test example's own score.
    """
    scores = np.asarray(category_scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyCategory("Mondrian category is empty")
    if not np.all(np.isfinite(scores)) or not np.isfinite(test_alpha):
        raise ValueError("nonconformity scores must be finite")
    greater = int(np.count_nonzero(scores > test_alpha))
    ties = int(np.count_nonzero(scores == test_alpha))
    if ties == 0:
        raise ValueError("category_scores must include the test score")
    return (greater + tau * ties) / scores.size


def tcp_predict(train: Dataset, x_new, config: TcpConfig = TcpConfig(), index: int = 0) -> PValuePair:
    """Full transductive p-values for one object.

    For each hypothesised label the forest is retrained on the training set
    plus ``(x_new, y)``; only examples labelled ``y`` (the Mondrian category,
    test example included) enter that label's p-value. ``index`` keys the
    per-object forest seeds and smoothing draws so that calls are
    independent of evaluation order.
    """
    if train.n == 0:
        raise EmptyDataset("training set is empty")
    x = np.asarray(x_new, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != train.p:
        raise DimensionMismatch(f"query has shape {x.shape}, training data has {train.p} features")

    X_aug = np.vstack([train.features, x[None, :]])
    p = []
    for y in (0, 1):
        y_aug = np.append(train.labels, np.int8(y))
        forest_cfg = replace(config.forest, seed=derive_seed(config.forest.seed, index, y))
        forest = train_forest(Dataset(X_aug, y_aug, train.feature_names), forest_cfg)
        members = X_aug[y_aug == y]  # test example is the last member
        alphas = nonconformity(forest.predict(members), y, config.score_direction)
        tau = derive_uniform(config.smoothing_seed, index, y)
        p.append(smoothed_mondrian_pvalue(alphas, alphas[-1], tau))
    return PValuePair(p[0], p[1])


def tcp_predict_many(train: Dataset, X, config: TcpConfig = TcpConfig(), start_index: int = 0) -> list[PValuePair]:
    X = np.asarray(X, dtype=np.float64)
    return [tcp_predict(train, x, config, start_index + i) for i, x in enumerate(X)]


def prediction_region(p: PValuePair, epsilon: float) -> PredictionRegion:
    """Labels whose p-value strictly exceeds ``epsilon``."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    return PredictionRegion(p[0] > epsilon, p[1] > epsilon, epsilon)
