"""Tables, time series and heat-map records built from country projections."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, TextIO

from .ingest import CountryCode
from .project import CountryProjection

MILLION = 1e6
REST_OF_WORLD = "Rest of World"
WORLD = "World"


@dataclass(frozen=True)
class AggregateRow:
    group: str
    profiles: float  # millions
    se: float | None  # millions
    percentage: float


@dataclass(frozen=True)
class AggregateTable:
    scenario: str
    rows: tuple[AggregateRow, ...]
    total: float  # millions

    def write_csv(self, stream: TextIO) -> None:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(["group", "profiles_millions", "se_millions", "percentage"])
        for r in self.rows:
            se = "" if r.se is None else f"{r.se:.4f}"
            writer.writerow([r.group, f"{r.profiles:.4f}", se, f"{r.percentage:.4f}"])


def _country(p: CountryProjection) -> CountryCode:
    if p.country is None:
        raise ValueError("aggregate projections cannot be tabulated by country")
    return p.country


def _scenario(projections: list[CountryProjection]) -> str:
    kinds = {p.scenario for p in projections}
    if len(kinds) > 1:
        raise ValueError(f"projections mix scenarios {sorted(kinds)}")
    return kinds.pop() if kinds else ""


def _se(projections) -> float | None:
    if any(p.total_se is None for p in projections):
        return None
    return math.sqrt(math.fsum(p.total_se**2 for p in projections)) / MILLION


def _share(value: float, total: float) -> float:
    return 100.0 * value / total if total > 0 else 0.0


def aggregate_by_continent(projections: Iterable[CountryProjection]) -> AggregateTable:
    """Continent totals (millions) with root-sum-of-squares SEs."""
    projections = list(projections)
    groups: dict[str, list[CountryProjection]] = defaultdict(list)
    for p in projections:
        groups[_country(p).continent].append(p)
    total = math.fsum(p.total_2100 for p in projections)
    rows = [
        AggregateRow(name, math.fsum(p.total_2100 for p in members) / MILLION, _se(members),
                     _share(math.fsum(p.total_2100 for p in members), total))
        for name, members in groups.items()
    ]
    rows.sort(key=lambda r: (-r.profiles, r.group))
    return AggregateTable(_scenario(projections), tuple(rows), total / MILLION)


def top_countries_table(projections: Iterable[CountryProjection], n: int = 10) -> AggregateTable:
    """The ``n`` largest countries, then one row for everything else (if anything is left)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    projections = sorted(projections, key=lambda p: (-p.total_2100, _country(p).code))
    total = math.fsum(p.total_2100 for p in projections)
    top, rest = projections[:n], projections[n:]
    rows = [AggregateRow(p.country.name, p.total_2100 / MILLION,
                         None if p.total_se is None else p.total_se / MILLION,
                         _share(p.total_2100, total)) for p in top]
    if rest:
        value = math.fsum(p.total_2100 for p in rest)
        rows.append(AggregateRow(REST_OF_WORLD, value / MILLION, _se(rest), _share(value, total)))
    return AggregateTable(_scenario(projections), tuple(rows), total / MILLION)


def _series_rows(label: str, projections: list[CountryProjection]):
    years = projections[0].years
    for i, year in enumerate(years):
        deaths = math.fsum(p.deaths_by_year[i] for p in projections)
        cumulative = math.fsum(p.cumulative_dead[i] for p in projections)
        if all(p.deaths_se is not None for p in projections):
            dse = math.sqrt(math.fsum(p.deaths_se[i] ** 2 for p in projections))
            cse = math.sqrt(math.fsum(p.cumulative_se[i] ** 2 for p in projections))
            ses = [f"{dse / MILLION:.6f}", f"{cse / MILLION:.6f}"]
        else:
            ses = ["", ""]
        yield [int(year), label, f"{deaths / MILLION:.6f}", f"{cumulative / MILLION:.6f}", *ses]


def timeseries_export(projections: Iterable[CountryProjection], stream: TextIO,
                      grouping: str = "country") -> None:
    """Yearly and cumulative deaths (millions) per group, followed by the world rows."""
    if grouping not in ("country", "continent"):
        raise ValueError("grouping must be 'country' or 'continent'")
    projections = list(projections)
    groups: dict[str, list[CountryProjection]] = defaultdict(list)
    for p in projections:
        c = _country(p)
        groups[c.code if grouping == "country" else c.continent].append(p)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["year", "group", "yearly_deaths_millions", "cumulative_dead_millions",
                     "yearly_se_millions", "cumulative_se_millions"])
    for label in sorted(groups):
        writer.writerows(_series_rows(label, groups[label]))
    if projections:
        writer.writerows(_series_rows(WORLD, projections))


@dataclass(frozen=True)
class HeatmapRecord:
    country: CountryCode
    included: bool
    value: float | None = None
    log_value: float | None = None
    zero: bool = False
    status: str = "included"


def heatmap_records(projections: Iterable[CountryProjection], countries: dict[str, CountryCode],
                    excluded: Iterable[str] = (), unprojectable: Iterable[str] = ()) -> list[HeatmapRecord]:
    """One record per known country, in code order."""
    by_code = {_country(p).code: p for p in projections}
    excluded, unprojectable = set(excluded), set(unprojectable)
    out = []
    for code in sorted(countries):
        c = countries[code]
        p = by_code.get(code)
        if p is not None:
            v = float(p.total_2100)
            if v > 0:
                out.append(HeatmapRecord(c, True, v, math.log10(v)))
            else:
                out.append(HeatmapRecord(c, True, v, None, True, "zero"))
        elif code in excluded:
            out.append(HeatmapRecord(c, False, status="filtered"))
        elif code in unprojectable:
            out.append(HeatmapRecord(c, False, status="unprojectable"))
        else:
            out.append(HeatmapRecord(c, False, status="no data"))
    return out


def heatmap_export(records: Iterable[HeatmapRecord], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["code", "name", "continent", "included", "status", "value", "log10_value"])
    for r in records:
        writer.writerow([
            r.country.code, r.country.name, r.country.continent, str(r.included).lower(), r.status,
            "" if r.value is None else f"{r.value:.1f}",
            "" if r.log_value is None else f"{r.log_value:.6f}",
        ])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    version: str
    seed: int
    config: dict
    inputs: dict[str, str] = field(default_factory=dict)  # name -> sha256
    outputs: dict[str, str] = field(default_factory=dict)
    started: str = ""
    finished: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))
