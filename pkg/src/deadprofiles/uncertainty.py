"""Bayesian bootstrap: refit under flat-Dirichlet weights and summarise replicates."""
from __future__ import annotations

import csv
import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np

from .ingest import AudienceSnapshot, DemographicTable
from .project import (
    CountryData,
    CountryProjection,
    ProjectionError,
    ProjectionGrid,
    ScenarioConfig,
    fit_prepared,
    prepare_country,
    project_country,
)

log = logging.getLogger(__name__)

FAILURE_FLAG_SHARE = 0.10


def draw_dirichlet_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    """A point on the ``n``-simplex from the flat Dirichlet (normalised exponentials)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    e = rng.standard_exponential(n)
    return e / e.sum()


def fitting_weights(n: int, rng: np.random.Generator) -> np.ndarray:
    """Dirichlet weights rescaled to mean one."""
    return n * draw_dirichlet_weights(n, rng)


def standard_error(values) -> float:
    """Sample standard deviation (divisor n - 1); 0 when fewer than two values."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return 0.0
    return float(np.std(np.sort(v), ddof=1))


@dataclass(frozen=True)
class BootstrapConfig:
    replicates: int = 500
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("replicates must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


@dataclass
class PosteriorSummary:
    point: float
    replicate_values: np.ndarray
    se: float
    degenerate: bool = False

    @classmethod
    def from_replicates(cls, point: float, values) -> "PosteriorSummary":
        values = np.asarray(values, dtype=float)
        return cls(point, values, standard_error(values), values.size < 2)


@dataclass
class BootstrapResult:
    country: str
    totals: dict[str, PosteriorSummary]
    deaths_se: dict[str, np.ndarray]
    cumulative_se: dict[str, np.ndarray]
    replicate_series: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    replicate_ids: tuple[int, ...] = ()
    failures: int = 0
    flagged: bool = False

    def attach(self, projection: CountryProjection) -> CountryProjection:
        """Copy the standard errors onto the matching point projection."""
        v = projection.scenario
        projection.total_se = self.totals[v].se
        projection.deaths_se = self.deaths_se[v]
        projection.cumulative_se = self.cumulative_se[v]
        return projection


def replicate_rng(seed: int, country: str, replicate: int) -> np.random.Generator:
    """Stream for one (country, replicate) pair, independent of execution order."""
    key = (zlib.crc32(country.encode("ascii")), replicate)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _replicate(data: CountryData, scenarios, grid, seed: int, r: int):
    rng = replicate_rng(seed, data.country.code, r)
    n = data.n_obs
    weights = {m: fitting_weights(n[m], rng) for m in ("f", "g", "h")}
    try:
        models = fit_prepared(data, grid, weights)
    except ProjectionError as exc:
        log.debug("replicate %d failed: %s", r, exc)
        return None
    return {cfg.variant: project_country(models, cfg, grid).deaths_by_year for cfg in scenarios}


def _replicate_task(args):
    return _replicate(*args)


def bootstrap_country(demo: DemographicTable, aud: AudienceSnapshot, scenarios,
                      bcfg: BootstrapConfig, *, grid: ProjectionGrid | None = None,
                      points: dict[str, CountryProjection] | None = None) -> BootstrapResult:
    """Posterior of the yearly deaths and the 2100 total for each scenario.

    ``points`` may carry already computed full-data projections; otherwise
    they are fitted here.
    """
    return bootstrap_prepared(prepare_country(demo, aud), scenarios, bcfg, grid=grid, points=points)


def bootstrap_prepared(data: CountryData, scenarios, bcfg: BootstrapConfig, *,
                       grid: ProjectionGrid | None = None,
                       points: dict[str, CountryProjection] | None = None) -> BootstrapResult:
    """As ``bootstrap_country``, starting from already assembled model inputs."""
    grid = grid or ProjectionGrid()
    if isinstance(scenarios, ScenarioConfig):
        scenarios = [scenarios]
    if points is None:
        models = fit_prepared(data, grid)
        points = {cfg.variant: project_country(models, cfg, grid) for cfg in scenarios}

    tasks = [(data, scenarios, grid, bcfg.seed, r) for r in range(bcfg.replicates)]
    if bcfg.workers > 1 and bcfg.replicates > 1:
        with ProcessPoolExecutor(max_workers=bcfg.workers) as pool:
            results = list(pool.map(_replicate_task, tasks, chunksize=max(1, len(tasks) // (4 * bcfg.workers))))
    else:
        results = [_replicate(*t) for t in tasks]

    ids = tuple(r for r, res in enumerate(results) if res is not None)
    ok = [results[r] for r in ids]
    failures = len(results) - len(ok)
    flagged = failures > FAILURE_FLAG_SHARE * bcfg.replicates
    if flagged:
        log.warning("%s: %d of %d bootstrap replicates failed", data.country.code, failures, bcfg.replicates)

    totals, dse, cse, series = {}, {}, {}, {}
    for cfg in scenarios:
        v = cfg.variant
        width = points[v].deaths_by_year.size
        reps = np.array([res[v] for res in ok]).reshape(len(ok), width)
        cum = np.cumsum(reps, axis=1)
        series[v] = reps
        totals[v] = PosteriorSummary.from_replicates(points[v].total_2100, cum[:, -1] if ok else [])
        dse[v] = np.array([standard_error(c) for c in reps.T]) if ok else np.zeros(width)
        cse[v] = np.array([standard_error(c) for c in cum.T]) if ok else np.zeros(width)
    return BootstrapResult(data.country.code, totals, dse, cse, series, ids, failures, flagged)


def write_posterior(results, stream: TextIO) -> None:
    """CSV of ``country, scenario, replicate, total_2100``."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["country", "scenario", "replicate", "total_2100"])
    for res in results:
        for v, summary in res.totals.items():
            for i, value in zip(res.replicate_ids, summary.replicate_values):
                writer.writerow([res.country, v, i, repr(float(value))])


def combined_se(ses) -> float:
    """Root-sum-of-squares of independent standard errors."""
    return math.sqrt(sum(s * s for s in ses))
