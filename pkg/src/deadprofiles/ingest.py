"""Reading and validating demographic tables and audience snapshots."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, TextIO

import numpy as np

log = logging.getLogger(__name__)

CONTINENTS = ("Africa", "Asia", "Europe", "North America", "Oceania", "South America")
DEMOGRAPHIC_COLUMNS = ("country_code", "year_bin", "age_bin", "deaths", "population")
AUDIENCE_COLUMNS = ("country_code", "age", "lower", "upper")
DEFAULT_BIN_WIDTH = 5
REFERENCE_YEAR = 2018
OLDEST_BUCKET = "65+"
MIN_AUDIENCE_AGE, MAX_AUDIENCE_AGE = 18, 64
YEAR_RANGE = (2000, 2100)
AGE_RANGE = (0, 100)
DEFAULT_EPSILON = 1e-6

# The aggregate 65+ audience bucket enters the user model as one point at a
# nominal age, carrying the bucket's per-single-year average.
BUCKET_AGE = 70.0
BUCKET_WEIGHT = 0.5
BUCKET_SPAN = 35


class IngestError(ValueError):
    pass


class FormatError(IngestError):
    pass


class ValidationError(IngestError):
    pass


@dataclass(frozen=True)
class CountryCode:
    code: str
    name: str
    continent: str

    def __post_init__(self):
        if self.continent not in CONTINENTS:
            raise ValidationError(f"{self.code}: unknown continent {self.continent!r}")


def load_countries(stream: TextIO | None = None) -> dict[str, CountryCode]:
    """Country metadata keyed by ISO alpha-3 code (bundled table by default)."""
    if stream is None:
        text = resources.files("deadprofiles.data").joinpath("countries.csv").read_text("utf-8")
        stream = io.StringIO(text)
    out: dict[str, CountryCode] = {}
    for row in csv.DictReader(stream):
        code = row["code"].strip()
        if code in out:
            raise ValidationError(f"duplicate country code {code}")
        out[code] = CountryCode(code, row["name"].strip(), row["continent"].strip())
    return out


@dataclass(frozen=True)
class DemographicRecord:
    year_bin_start: int
    age_bin_start: int
    bin_width: int
    deaths: float
    population: float


@dataclass(frozen=True)
class DemographicTable:
    country: CountryCode
    records: tuple[DemographicRecord, ...]

    def __len__(self):
        return len(self.records)

    def coverage_gaps(self) -> list[tuple[int, int]]:
        """``(year_bin, age_bin)`` pairs missing from the 2000-2100 x 0-100 grid."""
        have = {(r.year_bin_start, r.age_bin_start) for r in self.records}
        return [
            (y, a)
            for y in range(YEAR_RANGE[0], YEAR_RANGE[1] + 1, DEFAULT_BIN_WIDTH)
            for a in range(AGE_RANGE[0], AGE_RANGE[1] + 1, DEFAULT_BIN_WIDTH)
            if (y, a) not in have
        ]


@dataclass(frozen=True)
class MalformedRow:
    line: int
    reason: str
    raw: str


@dataclass
class DemographicData:
    tables: dict[str, DemographicTable]
    malformed: list[MalformedRow] = field(default_factory=list)


@dataclass(frozen=True)
class AudienceEntry:
    age: int | str
    lower: float
    upper: float
    midpoint: float

    def __post_init__(self):
        if not 0 <= self.lower <= self.midpoint <= self.upper:
            raise ValidationError(f"age {self.age}: bounds out of order")


@dataclass(frozen=True)
class AudienceSnapshot:
    country: CountryCode
    entries: tuple[AudienceEntry, ...]
    reference_year: int = REFERENCE_YEAR

    @property
    def total(self) -> float:
        return float(sum(e.midpoint for e in self.entries))


@dataclass
class AudienceData:
    snapshots: dict[str, AudienceSnapshot]
    skipped_unknown: int = 0
    malformed: list[MalformedRow] = field(default_factory=list)


@dataclass(frozen=True)
class RateObservation:
    year: float
    age: float
    rate: float
    weight: float = 1.0


def _number(text: str) -> float:
    value = float(text)
    if not np.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def _integer(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def parse_demographic_table(stream: TextIO, country_meta: dict[str, CountryCode] | None = None,
                            *, unit: str = "units") -> DemographicData:
    """Parse a ``country_code,year_bin,age_bin,deaths,population`` CSV.

    Rows that cannot be parsed, or that name a country missing from
    ``country_meta``, land in ``malformed``. Negative counts, empty
    populations and duplicate bins raise ``ValidationError``. With
    ``unit="thousands"`` counts are scaled to persons.
    """
    if unit not in ("units", "thousands"):
        raise ValueError(f"unit must be 'units' or 'thousands', not {unit!r}")
    scale = 1000.0 if unit == "thousands" else 1.0
    meta = load_countries() if country_meta is None else country_meta
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise FormatError("demographic table is empty") from None
    missing = [c for c in DEMOGRAPHIC_COLUMNS if c not in header]
    if missing:
        raise FormatError(f"demographic table missing columns: {', '.join(missing)}")
    col = {name: header.index(name) for name in header}
    has_width = "bin_width" in col

    records: dict[str, dict[tuple[int, int], DemographicRecord]] = {}
    malformed: list[MalformedRow] = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        raw = ",".join(row)
        try:
            if len(row) != len(header):
                raise ValueError(f"expected {len(header)} fields, got {len(row)}")
            code = row[col["country_code"]].strip()
            year = _integer(row[col["year_bin"]])
            age = _integer(row[col["age_bin"]])
            width = _integer(row[col["bin_width"]]) if has_width else DEFAULT_BIN_WIDTH
            deaths = _number(row[col["deaths"]]) * scale
            pop = _number(row[col["population"]]) * scale
        except (ValueError, IndexError) as exc:
            malformed.append(MalformedRow(lineno, str(exc), raw))
            continue
        if code not in meta:
            malformed.append(MalformedRow(lineno, f"unknown country code {code!r}", raw))
            continue
        if deaths < 0 or pop < 0:
            raise ValidationError(f"line {lineno} ({code} {year} age {age}): negative count")
        if pop == 0:
            raise ValidationError(
                f"line {lineno} ({code} {year} age {age}): population is zero"
                + (f" with {deaths:g} deaths" if deaths > 0 else ""))
        if width <= 0:
            raise ValidationError(f"line {lineno}: bin width must be positive")
        bins = records.setdefault(code, {})
        if (year, age) in bins:
            raise ValidationError(f"line {lineno}: duplicate bin {code} {year} age {age}")
        bins[(year, age)] = DemographicRecord(year, age, width, deaths, pop)

    tables = {
        code: DemographicTable(meta[code], tuple(bins[k] for k in sorted(bins)))
        for code, bins in sorted(records.items())
    }
    if malformed:
        log.warning("%d malformed demographic rows skipped", len(malformed))
    return DemographicData(tables, malformed)


def write_demographic_table(tables: Iterable[DemographicTable], stream: TextIO) -> None:
    tables = list(tables)
    with_width = any(r.bin_width != DEFAULT_BIN_WIDTH for t in tables for r in t.records)
    writer = csv.writer(stream, lineterminator="\n")
    header = list(DEMOGRAPHIC_COLUMNS)
    if with_width:
        header.insert(3, "bin_width")
    writer.writerow(header)
    for t in tables:
        for r in t.records:
            row = [t.country.code, r.year_bin_start, r.age_bin_start, repr(r.deaths), repr(r.population)]
            if with_width:
                row.insert(3, r.bin_width)
            writer.writerow(row)


def _audience_rows(stream: TextIO):
    text = stream.read()
    if text.lstrip().startswith("["):
        for i, item in enumerate(json.loads(text), start=1):
            yield i, {k: ("" if v is None else str(v)) for k, v in item.items()}, json.dumps(item)
        return
    reader = csv.DictReader(io.StringIO(text))
    missing = [c for c in AUDIENCE_COLUMNS if c not in (reader.fieldnames or [])]
    if missing:
        raise FormatError(f"audience table missing columns: {', '.join(missing)}")
    for lineno, row in enumerate(reader, start=2):
        yield lineno, row, ",".join(str(v) for v in row.values())


def _age_label(text: str) -> int | str:
    text = text.strip()
    if text == OLDEST_BUCKET:
        return OLDEST_BUCKET
    age = _integer(text)
    if not MIN_AUDIENCE_AGE <= age <= MAX_AUDIENCE_AGE:
        raise ValueError(f"audience age {age} outside {MIN_AUDIENCE_AGE}-{MAX_AUDIENCE_AGE}")
    return age


def parse_audience_snapshot(stream: TextIO, country_meta: dict[str, CountryCode] | None = None,
                            *, reference_year: int = REFERENCE_YEAR) -> AudienceData:
    """Parse audience bounds per country and age (CSV or a JSON array).

    Midpoints are taken between the lower and upper bound. Unknown country
    codes are skipped and counted.
    """
    meta = load_countries() if country_meta is None else country_meta
    entries: dict[str, dict] = {}
    skipped = 0
    malformed: list[MalformedRow] = []
    for lineno, row, raw in _audience_rows(stream):
        try:
            code = row["country_code"].strip()
            age = _age_label(row["age"])
            lower = _number(row["lower"])
            upper = _number(row["upper"])
        except (KeyError, ValueError, AttributeError) as exc:
            malformed.append(MalformedRow(lineno, str(exc), raw))
            continue
        if code not in meta:
            skipped += 1
            continue
        if lower < 0:
            raise ValidationError(f"line {lineno} ({code} age {age}): negative lower bound")
        if upper < lower:
            raise ValidationError(f"line {lineno} ({code} age {age}): upper bound below lower")
        per_country = entries.setdefault(code, {})
        if age in per_country:
            raise ValidationError(f"line {lineno}: duplicate age {age} for {code}")
        per_country[age] = AudienceEntry(age, lower, upper, (lower + upper) / 2)
    if skipped:
        log.warning("%d audience rows with unknown country codes skipped", skipped)

    def order(age):
        return (1, 0) if age == OLDEST_BUCKET else (0, age)

    snapshots = {
        code: AudienceSnapshot(meta[code], tuple(ages[a] for a in sorted(ages, key=order)),
                               reference_year)
        for code, ages in sorted(entries.items())
    }
    return AudienceData(snapshots, skipped, malformed)


def write_audience_snapshot(snapshots: Iterable[AudienceSnapshot], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(AUDIENCE_COLUMNS)
    for s in snapshots:
        for e in s.entries:
            writer.writerow([s.country.code, e.age, repr(e.lower), repr(e.upper)])


def to_rate_observations(table: DemographicTable, epsilon: float = DEFAULT_EPSILON) -> list[RateObservation]:
    """Annual death rates at bin midpoints, clamped into ``[epsilon, 1 - epsilon]``."""
    if not 0 < epsilon <= 0.01:
        raise ValueError("epsilon must lie in (0, 0.01]")
    out = []
    for r in table.records:
        rate = r.deaths / (r.population * r.bin_width)
        rate = min(max(rate, epsilon), 1.0 - epsilon)
        half = r.bin_width / 2
        out.append(RateObservation(r.year_bin_start + half, r.age_bin_start + half, rate))
    return out


def population_observations(table: DemographicTable):
    """``(year, age, persons per single year of age)`` arrays at bin midpoints."""
    rec = table.records
    year = np.array([r.year_bin_start + r.bin_width / 2 for r in rec])
    age = np.array([r.age_bin_start + r.bin_width / 2 for r in rec])
    pop = np.array([r.population / r.bin_width for r in rec])
    return year, age, pop


def audience_observations(snapshot: AudienceSnapshot, *, bucket_age: float = BUCKET_AGE,
                          bucket_weight: float = BUCKET_WEIGHT, bucket_span: int = BUCKET_SPAN):
    """``(age, users, weight)`` arrays for the user model, 65+ bucket included."""
    ages, users, weights = [], [], []
    for e in snapshot.entries:
        if e.age == OLDEST_BUCKET:
            ages.append(bucket_age)
            users.append(e.midpoint / bucket_span)
            weights.append(bucket_weight)
        else:
            ages.append(float(e.age))
            users.append(e.midpoint)
            weights.append(1.0)
    return np.array(ages), np.array(users), np.array(weights)


@dataclass(frozen=True)
class CountryFilter:
    kept: dict[str, AudienceSnapshot]
    excluded: tuple[str, ...]


def filter_countries(snapshots: dict[str, AudienceSnapshot], min_users: float) -> CountryFilter:
    """Drop countries whose summed midpoints fall below ``min_users``."""
    if min_users < 0:
        raise ValueError("min_users must be non-negative")
    kept = {c: s for c, s in snapshots.items() if s.total >= min_users}
    excluded = tuple(sorted(c for c in snapshots if c not in kept))
    return CountryFilter(kept, excluded)
