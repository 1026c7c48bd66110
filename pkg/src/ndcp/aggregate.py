"""Non-disclosed aggregation: average of per-source transductive p-values."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from . import conformal
from .conformal import PValuePair, TcpConfig
from .dataset import Dataset
from .errors import DimensionMismatch, EmptyList, NDCPError


class SourceFailure(NDCPError, RuntimeError):
    def __init__(self, source_index: int, cause: Exception):
        super().__init__(f"source {source_index}: {cause}")
        self.source_index = source_index
        self.__cause__ = cause


@dataclass(frozen=True, eq=False)
class SourceEnsemble:
    sources: tuple[tuple[Dataset, TcpConfig], ...]

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if not self.sources:
            raise EmptyList("an ensemble needs at least one source")
        dims = {d.p for d, _ in self.sources}
        if len(dims) != 1:
            raise DimensionMismatch(f"sources disagree on feature dimensionality: {sorted(dims)}")

    @property
    def k(self) -> int:
        return len(self.sources)

    @property
    def p(self) -> int:
        return self.sources[0][0].p


def aggregate_pvalues(pairs: Sequence[PValuePair]) -> PValuePair:
    """Unweighted mean of p0 and of p1, accumulated in list order."""
    if len(pairs) == 0:
        raise EmptyList("nothing to aggregate")
    s0 = 0.0
    s1 = 0.0
    for p0, p1 in pairs:
        s0 += p0
        s1 += p1
    k = len(pairs)
    return PValuePair(s0 / k, s1 / k)


def source_pvalues(ensemble: SourceEnsemble, x_new, index: int = 0) -> list[PValuePair]:
    """Each source's own transductive p-values for ``x_new``."""
    out = []
    for k, (data, cfg) in enumerate(ensemble.sources):
        try:
            out.append(conformal.tcp_predict(data, x_new, cfg, index))
        except Exception as exc:
            raise SourceFailure(k, exc) from exc
    return out


def ndcp_predict(ensemble: SourceEnsemble, x_new, index: int = 0) -> PValuePair:
    return aggregate_pvalues(source_pvalues(ensemble, x_new, index))
