"""End-to-end evaluation: repeated splits, partition scenarios, metrics, reports.

Each repetition draws a fresh 80/20 split. Every scenario partitions the
training part into sources, each source computes transductive p-values for
every test object, and the averaged (non-disclosed) p-values are scored
next to each source's own ("small TCP") p-values. All seeds are derived
from the master seed and keyed by names, never by list position.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__
from .aggregate import SourceEnsemble, aggregate_pvalues
from .conformal import TcpConfig, tcp_predict
from .dataset import (
    Dataset,
    PartitionSpec,
    SplitSpec,
    load_csv,
    make_two_gaussians,
    partition,
    train_test_split,
)
from .errors import ExperimentError
from .forest import ForestConfig
from .metrics import MetricsReport, SignificanceGrid, comparison_matrix, evaluate, fmt6
from .seeding import derive_seed

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

PARTIAL_MARKER = "PARTIAL"


@dataclass(frozen=True)
class DatasetSpec:
    """A CSV file, or a synthetic two-Gaussian set when ``synthetic`` is given."""

    name: str
    path: str | None = None
    label_column: str = "label"
    encoding: str = "onehot"
    synthetic: dict | None = None

    def load(self) -> Dataset:
        if self.synthetic is not None:
            opts = dict(self.synthetic)
            return make_two_gaussians(int(opts.pop("n")), int(opts.pop("seed", 0)), **opts)
        if self.path is None:
            raise ValueError(f"dataset {self.name!r} has neither a path nor a synthetic spec")
        return load_csv(self.path, self.label_column, self.encoding)


@dataclass(frozen=True)
class Scenario:
    label: str
    scheme: str = "pooled"
    k: int = 1


def default_scenarios(ks: Sequence[int] = (2, 4, 6), random_draws: int = 5,
                      pooled: bool = True) -> tuple[Scenario, ...]:
    out = [Scenario("Pooled")] if pooled else []
    out += [Scenario(f"EqSrc{k}", "equal", k) for k in ks]
    out += [Scenario(f"RandSrc{k}.{d}", "random", k) for k in ks for d in range(1, random_draws + 1)]
    return tuple(out)


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple[DatasetSpec, ...]
    scenarios: tuple[Scenario, ...] = field(default_factory=default_scenarios)
    repetitions: int = 5
    train_fraction: float = 0.8
    min_size: int = 10
    forest: ForestConfig = field(default_factory=ForestConfig)
    score_direction: str = "conventional"
    grid: SignificanceGrid = field(default_factory=SignificanceGrid)
    test_cap: int | None = None
    master_seed: int = 0

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        if not self.datasets:
            raise ValueError("at least one dataset is required")
        labels = [s.label for s in self.scenarios]
        if len(set(labels)) != len(labels):
            raise ValueError("scenario labels must be unique")
        names = [d.name for d in self.datasets]
        if len(set(names)) != len(names):
            raise ValueError("dataset names must be unique")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {"levels": list(self.grid.levels)}
        return d

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        d = dict(d)
        datasets = []
        for i, spec in enumerate(d.pop("datasets", [])):
            spec = dict(spec)
            if spec.get("path") is not None and base_dir is not None:
                spec["path"] = str((base_dir / spec["path"]).resolve())
            default_name = Path(spec["path"]).stem if spec.get("path") else f"dataset{i}"
            spec.setdefault("name", default_name)
            datasets.append(DatasetSpec(**spec))
        d["datasets"] = tuple(datasets)

        sc = d.pop("scenarios", None)
        if isinstance(sc, list):
            d["scenarios"] = tuple(Scenario(**s) for s in sc)
        elif isinstance(sc, dict):
            scenarios = []
            if sc.get("pooled", True):
                scenarios.append(Scenario("Pooled"))
            scenarios += [Scenario(f"EqSrc{k}", "equal", k) for k in sc.get("equal", ())]
            draws = int(sc.get("random_draws", 5))
            scenarios += [Scenario(f"RandSrc{k}.{j}", "random", k)
                          for k in sc.get("random", ()) for j in range(1, draws + 1)]
            d["scenarios"] = tuple(scenarios)

        if "forest" in d:
            d["forest"] = ForestConfig(**d["forest"])
        if "grid" in d:
            g = d["grid"]
            d["grid"] = (SignificanceGrid(tuple(g["levels"])) if "levels" in g
                         else SignificanceGrid.arange(g["start"], g["stop"], g["step"]))
        return cls(**d)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


@dataclass(eq=False)
class ScenarioResult:
    dataset: str
    scenario: str
    repetition: int
    report: MetricsReport
    small: list[MetricsReport]
    source_sizes: list[int]
    pvalues: np.ndarray = field(repr=False)          # (m, 2) aggregated
    source_pvalues: np.ndarray = field(repr=False)   # (K, m, 2)
    truths: np.ndarray = field(repr=False)


@dataclass(eq=False)
class ExperimentResult:
    config: ExperimentConfig
    results: list[ScenarioResult]
    seeds: dict[str, int]

    def values(self, measure: str) -> dict[str, list[float]]:
        """Per-scenario metric vectors paired across (dataset, repetition)."""
        out: dict[str, list[float]] = {s.label: [] for s in self.config.scenarios}
        for r in sorted(self.results, key=lambda r: (r.dataset, r.repetition)):
            out[r.scenario].append(getattr(r.report, measure))
        return out


def _scenario_sources(train: Dataset, scenario: Scenario, cfg: ExperimentConfig,
                      dataset: str, rep: int, seeds: dict[str, int]) -> SourceEnsemble:
    key = (cfg.master_seed, dataset, rep, scenario.label)
    pseed = derive_seed("partition", *key)
    seeds[f"partition/{dataset}/{rep}/{scenario.label}"] = pseed
    parts = partition(train, PartitionSpec(scenario.scheme, scenario.k, cfg.min_size, pseed))
    sources = []
    for k, part in enumerate(parts):
        tcp = TcpConfig(
            forest=replace(cfg.forest, seed=derive_seed("forest", *key, k)),
            score_direction=cfg.score_direction,
            smoothing_seed=derive_seed("tau", *key, k),
        )
        seeds[f"forest/{dataset}/{rep}/{scenario.label}/{k}"] = tcp.forest.seed
        seeds[f"tau/{dataset}/{rep}/{scenario.label}/{k}"] = tcp.smoothing_seed
        sources.append((part, tcp))
    return SourceEnsemble(tuple(sources))


def run_scenario(ensemble: SourceEnsemble, test: Dataset, grid: SignificanceGrid,
                 label: str = "", repetition: int = 0, dataset: str = "") -> ScenarioResult:
    m = test.n
    src = np.empty((ensemble.k, m, 2))
    agg = np.empty((m, 2))
    for j in range(m):
        pairs = [tcp_predict(data, test.features[j], tcp, j) for data, tcp in ensemble.sources]
        src[:, j, :] = pairs
        agg[j] = aggregate_pvalues(pairs)
    truths = test.labels.astype(np.int64)
    report = evaluate(agg, truths, grid, label, repetition)
    small = [evaluate(src[k], truths, grid, label, repetition) for k in range(ensemble.k)] if ensemble.k > 1 else []
    return ScenarioResult(dataset, label, repetition, report, small,
                          [d.n for d, _ in ensemble.sources], agg, src, truths)


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> ExperimentResult:
    """Run every (dataset, repetition, scenario) cell; optionally write reports."""
    results: list[ScenarioResult] = []
    seeds: dict[str, int] = {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / PARTIAL_MARKER).unlink(missing_ok=True)
    context = "loading data"
    try:
        for dspec in config.datasets:
            context = f"dataset {dspec.name}"
            data = dspec.load()
            for rep in range(config.repetitions):
                split_seed = derive_seed("split", config.master_seed, dspec.name, rep)
                seeds[f"split/{dspec.name}/{rep}"] = split_seed
                train, test = train_test_split(data, SplitSpec(config.train_fraction, split_seed))
                if config.test_cap is not None and test.n > config.test_cap:
                    cap_seed = derive_seed("cap", config.master_seed, dspec.name, rep)
                    seeds[f"cap/{dspec.name}/{rep}"] = cap_seed
                    keep = np.random.default_rng(cap_seed).choice(test.n, config.test_cap, replace=False)
                    test = test.subset(np.sort(keep))
                for sc in config.scenarios:
                    context = f"dataset {dspec.name}, scenario {sc.label}, repetition {rep}"
                    log.info("running %s", context)
                    t0 = time.perf_counter()
                    ens = _scenario_sources(train, sc, config, dspec.name, rep, seeds)
                    results.append(run_scenario(ens, test, config.grid, sc.label, rep, dspec.name))
                    log.debug("%s took %.2fs", context, time.perf_counter() - t0)
    except Exception as exc:
        if out is not None:
            partial = ExperimentResult(config, results, seeds)
            write_metrics(partial, out / "metrics.csv")
            (out / PARTIAL_MARKER).write_text(f"failed at {context}: {type(exc).__name__}: {exc}\n")
        raise ExperimentError(f"{context}: {exc}") from exc
    result = ExperimentResult(config, results, seeds)
    if out is not None:
        emit_reports(result, out)
    return result


# ---------------------------------------------------------------------------
# reports


def _write(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_metrics(result: ExperimentResult, path: Path) -> None:
    _write(path, ["dataset", "scenario", "repetition", "validity", "efficiency"],
           ([r.dataset, r.scenario, r.repetition, fmt6(r.report.validity), fmt6(r.report.efficiency)]
            for r in result.results))


def _safe(label: str) -> str:
    return "".join(c if c.isalnum() or c in "._-" else "_" for c in label)


def emit_reports(result: ExperimentResult, out_dir: str | Path) -> list[Path]:
    """Write metrics, small-TCP metrics, calibration curves, Wilcoxon matrices and a manifest."""
    if not result.results:
        raise ExperimentError("no results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.csv", out / "smalltcp.csv"]
    write_metrics(result, written[0])
    _write(written[1], ["dataset", "scenario", "repetition", "source", "n_train", "validity", "efficiency"],
           ([r.dataset, r.scenario, r.repetition, k, r.source_sizes[k], fmt6(s.validity), fmt6(s.efficiency)]
            for r in result.results for k, s in enumerate(r.small)))

    grid = np.asarray(result.config.grid.levels)
    for sc in result.config.scenarios:
        curves = [r.report.curve.error_rates for r in result.results if r.scenario == sc.label]
        if not curves:
            continue
        mean_err = np.mean(curves, axis=0)
        path = out / f"calibration_{_safe(sc.label)}.csv"
        _write(path, ["epsilon", "error_rate"], ([fmt6(e), fmt6(v)] for e, v in zip(grid, mean_err)))
        written.append(path)

    for measure in ("validity", "efficiency"):
        mat = comparison_matrix(result.values(measure), "greater")
        path = out / f"wilcoxon_{measure}.csv"
        _write(path, ["row_scenario", "column_scenario", "p_value", "degenerate"],
               ([r, c, fmt6(p), int(flag)] for r, c, p, flag in mat.rows()))
        written.append(path)

    manifest = {
        "version": __version__,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "config": result.config.to_dict(),
        "seeds": result.seeds,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(path)
    return written


def replay(manifest_path: str | Path, out_dir: str | Path | None = None) -> ExperimentResult:
    """Re-run the experiment recorded in a manifest."""
    manifest = json.loads(Path(manifest_path).read_text(encoding="utf-8"))
    config = ExperimentConfig.from_dict(manifest["config"])
    return run_experiment(config, out_dir)


def summarize(result: ExperimentResult) -> list[tuple[str, float, float, float]]:
    """(scenario, median efficiency, median validity, efficiency variance) per scenario."""
    rows = []
    for sc in result.config.scenarios:
        eff = [r.report.efficiency for r in result.results if r.scenario == sc.label]
        val = [r.report.validity for r in result.results if r.scenario == sc.label]
        if eff:
            rows.append((sc.label, float(np.median(eff)), float(np.median(val)),
                         float(np.var(eff)) if len(eff) > 1 else math.nan))
    return rows
