"""Cohort projection of platform users and the deaths among them."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import ingest
from .ingest import AudienceSnapshot, CountryCode, DemographicTable
from .smooth import (
    BetaLogit,
    FitError,
    FittedSmoothModel,
    GaussianLog,
    GridBoundaryWarning,
    NegativeBinomialLog,
    build_cubic_spline_basis,
    build_tensor_design,
    fit,
)
from .smooth.design import TensorSmoothDesign

log = logging.getLogger(__name__)

BASE_YEAR = 2018
END_YEAR = 2100
MIN_AGE, MAX_AGE = 13, 100
FIRST_USER_AGE = 18
ANCHOR_AGE = 100.0
ANCHOR_USERS = 0.0
# one zero among dozens of counts in the millions barely moves a log-link fit
ANCHOR_WEIGHT = 10.0
MAIN_DIMENSION = 10
INTERACTION_DIMENSION = 5


class ProjectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProjectionGrid:
    """Rectangular (year, age) lattice; cohorts advance one cell per step.

    Points are cell centres. With ``step < 1`` each unit year and age is split
    into ``1 / step`` sub-cells centred inside it, so the sub-cells aggregate
    back onto the annual grid.
    """

    start_year: float = BASE_YEAR
    end_year: float = END_YEAR
    min_age: float = MIN_AGE
    max_age: float = MAX_AGE
    step: float = 1.0

    def __post_init__(self):
        if not 0 < self.step <= 1 or abs(1 / self.step - round(1 / self.step)) > 1e-9:
            raise ValueError("step must be 1/k for a positive integer k")
        if self.end_year < self.start_year or self.max_age < self.min_age:
            raise ValueError("empty projection grid")

    def _axis(self, lo, hi):
        k = round(1 / self.step)
        sub = (np.arange(k) + 0.5) * self.step - 0.5
        return (np.arange(lo, hi + 1)[:, None] + sub[None, :]).ravel()

    @property
    def years(self) -> np.ndarray:
        return self._axis(self.start_year, self.end_year)

    @property
    def ages(self) -> np.ndarray:
        return self._axis(self.min_age, self.max_age)

    @property
    def shape(self) -> tuple[int, int]:
        return self.years.size, self.ages.size

    @property
    def calendar_years(self) -> np.ndarray:
        return np.arange(self.start_year, self.end_year + 1).astype(int)

    def calendar_index(self) -> np.ndarray:
        """Calendar-year position of every time point."""
        return np.floor(self.years + 0.5).astype(int) - int(self.start_year)

    def user_ages(self) -> np.ndarray:
        """Mask of cells at or above the youngest user age."""
        return np.floor(self.ages + 0.5) >= FIRST_USER_AGE

    def mesh(self):
        """``(year, age)`` arrays of the grid's shape."""
        return np.meshgrid(self.years, self.ages, indexing="ij")


@dataclass(frozen=True)
class ScenarioConfig:
    variant: str = "A"
    growth_factor: float = 1.13
    cap: bool = True
    base_year: int = BASE_YEAR

    def __post_init__(self):
        if self.variant not in ("A", "B"):
            raise ValueError(f"scenario variant must be 'A' or 'B', not {self.variant!r}")
        if self.growth_factor < 1:
            raise ValueError("growth_factor must be at least 1")

    @classmethod
    def scenario_a(cls) -> "ScenarioConfig":
        return cls("A")

    @classmethod
    def scenario_b(cls, growth_rate: float = 0.13) -> "ScenarioConfig":
        return cls("B", 1.0 + growth_rate)


def _on_grid(values, grid: ProjectionGrid, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise ValueError(f"{what} has shape {values.shape}, grid is {grid.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what} must be finite")
    return values


@dataclass(frozen=True)
class RateSurface:
    values: np.ndarray
    grid: ProjectionGrid = field(default_factory=ProjectionGrid)

    def __post_init__(self):
        v = _on_grid(self.values, self.grid, "rate surface")
        if np.any((v < 0) | (v >= 1)):
            raise ValueError("mortality rates must lie in [0, 1)")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PopulationSurface:
    values: np.ndarray
    grid: ProjectionGrid = field(default_factory=ProjectionGrid)

    def __post_init__(self):
        v = _on_grid(self.values, self.grid, "population surface")
        if np.any(v < 0):
            raise ValueError("population must be non-negative")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class UserSurface:
    """Users per grid cell (a cell spans ``grid.step`` years of age)."""

    values: np.ndarray
    scenario: ScenarioConfig
    grid: ProjectionGrid = field(default_factory=ProjectionGrid)


@dataclass
class CountryProjection:
    country: CountryCode | None
    scenario: str
    years: np.ndarray
    deaths_by_year: np.ndarray
    cumulative_dead: np.ndarray
    total_2100: float
    living_by_year: np.ndarray | None = None
    total_se: float | None = None
    deaths_se: np.ndarray | None = None
    cumulative_se: np.ndarray | None = None

    @property
    def label(self) -> str:
        return "World" if self.country is None else self.country.name


def _values(x):
    return x.values if hasattr(x, "values") else np.asarray(x, dtype=float)


def _baseline(g0, grid: ProjectionGrid) -> np.ndarray:
    g0 = np.asarray(g0, dtype=float).copy()
    if g0.shape != (grid.ages.size,):
        raise ValueError("baseline users must be given for every grid age")
    g0[~grid.user_ages()] = 0.0
    if np.any(g0 < 0):
        raise ValueError("baseline users must be non-negative")
    return g0


def extrapolate_scenario_a(g0, f, grid: ProjectionGrid | None = None) -> UserSurface:
    """No new users; each cohort thins by its mortality rate every step.

    The oldest age is an open interval: survivors stay there until they die.
    """
    grid = grid or ProjectionGrid()
    q = _values(f) * grid.step
    U = np.zeros(grid.shape)
    U[0] = _baseline(g0, grid) * grid.step
    for t in range(1, U.shape[0]):
        surv = U[t - 1] * (1.0 - q[t - 1])
        U[t, 1:] = surv[:-1]
        U[t, -1] += surv[-1]
    return UserSurface(U, ScenarioConfig.scenario_a(), grid)


def extrapolate_scenario_b(g0, h, config: ScenarioConfig, grid: ProjectionGrid | None = None) -> UserSurface:
    """Cohorts grow by ``growth_factor`` per year, capped cell-wise by population.

    New 18-year-olds enter at the 2018 level compounded at the same rate.
    """
    if config.variant != "B":
        raise ValueError("scenario B extrapolation needs a variant B config")
    grid = grid or ProjectionGrid()
    g0 = _baseline(g0, grid)
    cap = _values(h) * grid.step
    growth = config.growth_factor ** grid.step
    ages = grid.ages
    young = ~grid.user_ages()
    entry = np.flatnonzero(~young)[:1]
    U = np.zeros(grid.shape)
    U[0] = g0 * grid.step
    for t in range(1, U.shape[0]):
        row = np.zeros(ages.size)
        row[1:] = U[t - 1, :-1] * growth
        row[-1] += U[t - 1, -1] * growth
        row[young] = 0.0
        if entry.size:
            row[entry] = g0[entry] * grid.step * config.growth_factor ** (grid.years[t] - config.base_year)
        if config.cap:
            row = np.minimum(row, cap[t])
        U[t] = row
    return UserSurface(U, config, grid)


def _deaths_per_step(f, u, grid) -> np.ndarray:
    q = _values(f) * grid.step
    return np.sum(q * _values(u), axis=1)


def expected_deaths(f, u, grid: ProjectionGrid | None = None) -> np.ndarray:
    """Deaths among users per calendar year, summed over ages."""
    grid = grid or ProjectionGrid()
    per_step = _deaths_per_step(f, u, grid)
    if grid.step == 1.0:
        return per_step
    out = np.zeros(grid.calendar_years.size)
    np.add.at(out, grid.calendar_index(), per_step)
    return out


def living_users(f, u, grid: ProjectionGrid | None = None) -> np.ndarray:
    """Users still alive at the end of each calendar year."""
    grid = grid or ProjectionGrid()
    q = _values(f) * grid.step
    alive = np.sum(_values(u) * (1.0 - q), axis=1)
    if grid.step == 1.0:
        return alive
    cal = grid.calendar_index()
    return alive[np.r_[cal[1:] != cal[:-1], True]]


def survivors(f, u, grid: ProjectionGrid | None = None) -> float:
    """Users alive after the final year's deaths."""
    return float(living_users(f, u, grid)[-1])


def accumulate(deaths_by_year) -> tuple[np.ndarray, float]:
    """Running total of deaths and its final value."""
    cumulative = np.cumsum(np.asarray(deaths_by_year, dtype=float))
    total = float(cumulative[-1]) if cumulative.size else 0.0
    return cumulative, total


# -- model fitting -----------------------------------------------------------

@dataclass
class CountryData:
    """Observations and model matrices for one country's three smooths."""

    country: CountryCode
    rate_design: TensorSmoothDesign
    rates: np.ndarray
    rate_weights: np.ndarray
    user_design: TensorSmoothDesign
    users: np.ndarray
    user_weights: np.ndarray
    pop_design: TensorSmoothDesign
    population: np.ndarray
    pop_weights: np.ndarray

    @property
    def n_obs(self) -> dict[str, int]:
        return {"f": self.rates.size, "g": self.users.size, "h": self.population.size}


def _tensor_design(age, year):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ba, _ = build_cubic_spline_basis(age, MAIN_DIMENSION)
        bt, _ = build_cubic_spline_basis(year, MAIN_DIMENSION)
        ia, _ = build_cubic_spline_basis(age, INTERACTION_DIMENSION)
        it, _ = build_cubic_spline_basis(year, INTERACTION_DIMENSION)
    return build_tensor_design(ba, bt, np.c_[age, year], interaction_bases=(ia, it))


def prepare_country(demo: DemographicTable, aud: AudienceSnapshot, *,
                    epsilon: float = ingest.DEFAULT_EPSILON) -> CountryData:
    if demo.country.code != aud.country.code:
        raise ValueError("demographic table and audience snapshot are for different countries")
    obs = ingest.to_rate_observations(demo, epsilon)
    r_age = np.array([o.age for o in obs])
    r_year = np.array([o.year for o in obs])
    rates = np.array([o.rate for o in obs])
    r_w = np.array([o.weight for o in obs])

    p_year, p_age, pop = ingest.population_observations(demo)

    u_age, users, u_w = ingest.audience_observations(aud)
    u_age = np.r_[u_age, ANCHOR_AGE]
    users = np.r_[users, ANCHOR_USERS]
    u_w = np.r_[u_w, ANCHOR_WEIGHT]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ub, _ = build_cubic_spline_basis(u_age, MAIN_DIMENSION)
    return CountryData(
        demo.country,
        _tensor_design(r_age, r_year), rates, r_w,
        build_tensor_design(ub, None, u_age), users, u_w,
        _tensor_design(p_age, p_year), pop, np.ones_like(pop),
    )


@dataclass
class CountryModels:
    country: CountryCode
    f_model: FittedSmoothModel
    g_model: FittedSmoothModel
    h_model: FittedSmoothModel
    f: RateSurface
    g0: np.ndarray
    h: PopulationSurface


def fit_prepared(data: CountryData, grid: ProjectionGrid | None = None, weights=None) -> CountryModels:
    """Fit mortality, user and population smooths and evaluate them on ``grid``.

    ``weights`` optionally maps ``"f"``, ``"g"``, ``"h"`` to multipliers of the
    base observation weights.
    """
    grid = grid or ProjectionGrid()
    weights = weights or {}
    wf = data.rate_weights * weights.get("f", 1.0)
    wg = data.user_weights * weights.get("g", 1.0)
    wh = data.pop_weights * weights.get("h", 1.0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GridBoundaryWarning)
            f_model = fit(data.rate_design, data.rates, wf, BetaLogit())
            g_model = fit(data.user_design, data.users, wg, NegativeBinomialLog())
            h_model = fit(data.pop_design, data.population, wh, GaussianLog())
    except (FitError, np.linalg.LinAlgError, ValueError) as exc:
        raise ProjectionError(f"{data.country.code}: model fit failed ({exc})") from exc

    years, ages = grid.mesh()
    f = f_model.predict(ages.ravel(), years.ravel()).reshape(grid.shape)
    h = h_model.predict(ages.ravel(), years.ravel()).reshape(grid.shape)
    g0 = g_model.predict(grid.ages)
    g0[~grid.user_ages()] = 0.0
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(h)) and np.all(np.isfinite(g0))):
        raise ProjectionError(f"{data.country.code}: non-finite predictions")
    return CountryModels(data.country, f_model, g_model, h_model,
                         RateSurface(np.minimum(f, 1 - 1e-12), grid), g0, PopulationSurface(h, grid))


def fit_country_models(demo: DemographicTable, aud: AudienceSnapshot,
                       grid: ProjectionGrid | None = None) -> CountryModels:
    return fit_prepared(prepare_country(demo, aud), grid)


def project_country(models: CountryModels, config: ScenarioConfig,
                    grid: ProjectionGrid | None = None) -> CountryProjection:
    grid = grid or models.f.grid
    if config.variant == "A":
        u = extrapolate_scenario_a(models.g0, models.f, grid)
    else:
        u = extrapolate_scenario_b(models.g0, models.h, config, grid)
    deaths = expected_deaths(models.f, u, grid)
    cumulative, total = accumulate(deaths)
    return CountryProjection(models.country, config.variant, grid.calendar_years, deaths,
                             cumulative, total, living_users(models.f, u, grid))


def combine(projections, scenario: str) -> CountryProjection:
    """Sum country projections into a global one (SEs combined in quadrature)."""
    projections = list(projections)
    if not projections:
        raise ValueError("nothing to combine")
    years = projections[0].years
    deaths = np.sum([p.deaths_by_year for p in projections], axis=0)
    cumulative, total = accumulate(deaths)
    living = None
    if all(p.living_by_year is not None for p in projections):
        living = np.sum([p.living_by_year for p in projections], axis=0)
    out = CountryProjection(None, scenario, years, deaths, cumulative, total, living)
    if all(p.total_se is not None for p in projections):
        out.total_se = math.sqrt(sum(p.total_se**2 for p in projections))
        out.deaths_se = np.sqrt(np.sum([p.deaths_se**2 for p in projections], axis=0))
        out.cumulative_se = np.sqrt(np.sum([p.cumulative_se**2 for p in projections], axis=0))
    return out


@dataclass
class PipelineResult:
    projections: dict[str, dict[str, CountryProjection]]
    world: dict[str, CountryProjection]
    models: dict[str, CountryModels]
    excluded: tuple[str, ...]
    unprojectable: dict[str, str]
    countries: dict[str, CountryCode]


def run_pipeline(demo_tables: dict[str, DemographicTable], snapshots: dict[str, AudienceSnapshot],
                 scenarios, *, min_users: float = 10_000, grid: ProjectionGrid | None = None,
                 countries=None) -> PipelineResult:
    """Fit and project every country that passes the audience filter."""
    grid = grid or ProjectionGrid()
    if isinstance(scenarios, ScenarioConfig):
        scenarios = [scenarios]
    if countries is not None:
        wanted = set(countries)
        snapshots = {c: s for c, s in snapshots.items() if c in wanted}
    filtered = ingest.filter_countries(snapshots, min_users)
    if not filtered.kept:
        raise ProjectionError("no country passes the audience filter")

    models: dict[str, CountryModels] = {}
    unprojectable: dict[str, str] = {}
    for code in sorted(filtered.kept):
        if code not in demo_tables:
            unprojectable[code] = "no demographic table"
            continue
        try:
            models[code] = fit_country_models(demo_tables[code], filtered.kept[code], grid)
        except ProjectionError as exc:
            log.warning("%s", exc)
            unprojectable[code] = str(exc)
    if not models:
        raise ProjectionError("no country could be projected")

    projections = {
        cfg.variant: {code: project_country(m, cfg, grid) for code, m in models.items()}
        for cfg in scenarios
    }
    world = {v: combine(p.values(), v) for v, p in projections.items()}
    meta = {code: s.country for code, s in snapshots.items()}
    return PipelineResult(projections, world, models, filtered.excluded, unprojectable, meta)


# -- exports -----------------------------------------------------------------

def write_surface_csv(surface, stream, grid: ProjectionGrid | None = None) -> None:
    """Matrix CSV: one row per year, one column per age."""
    grid = grid or getattr(surface, "grid", None) or ProjectionGrid()
    values = _values(surface)
    stream.write("year," + ",".join(f"{a:g}" for a in grid.ages) + "\n")
    for year, row in zip(grid.years, values):
        stream.write(f"{year:g}," + ",".join(repr(float(v)) for v in row) + "\n")


def projection_to_dict(p: CountryProjection) -> dict:
    def arr(x):
        return None if x is None else [float(v) for v in x]

    return {
        "country": None if p.country is None else p.country.code,
        "name": p.label,
        "scenario": p.scenario,
        "years": [int(y) for y in p.years],
        "deaths_by_year": arr(p.deaths_by_year),
        "cumulative_dead": arr(p.cumulative_dead),
        "total_2100": float(p.total_2100),
        "living_by_year": arr(p.living_by_year),
        "total_se": p.total_se,
        "deaths_se": arr(p.deaths_se),
        "cumulative_se": arr(p.cumulative_se),
    }
