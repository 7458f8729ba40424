"""Synthetic demographic and audience inputs bundled for tests and demos.

Mortality follows a Gompertz curve with a constant background hazard and a
slow secular decline; populations decay exponentially with age and grow
geometrically in time; audiences are a smooth hump peaking in the mid
twenties. Everything is closed form, so the files are reproducible.
"""
from __future__ import annotations

import io
import math
from importlib import resources

from .ingest import DEFAULT_BIN_WIDTH, OLDEST_BUCKET

# code: (mortality multiplier, persons per year of age at birth, age scale,
#        annual population growth, users at the audience peak)
COUNTRIES = {
    "IND": (1.2, 40e6, 60.0, 0.004, 17.5e6),
    "NGA": (1.8, 8e6, 30.0, 0.020, 1.6e6),
    "USA": (0.9, 4.4e6, 120.0, 0.003, 3.2e6),
}
AUDIENCE_ONLY = {"TUV": 90.0}  # peak users; total stays under the 10k filter
YEARS = range(2000, 2101, DEFAULT_BIN_WIDTH)
AGES = range(0, 101, DEFAULT_BIN_WIDTH)
PEAK_AGE = 25
FILES = ("demographics.csv", "audience.csv")


def annual_mortality(age: float, year: float, multiplier: float) -> float:
    m = (0.0005 + 0.00003 * math.exp(0.09 * age)) * math.exp(-0.01 * (year - 2000))
    return min(multiplier * m, 0.5)


def _users_at(age: float, peak: float) -> float:
    if age <= PEAK_AGE:
        return peak * math.exp(-0.5 * ((age - PEAK_AGE) / 6.0) ** 2)
    return peak * math.exp(-(age - PEAK_AGE) / 22.0)


def demographics_csv() -> str:
    out = io.StringIO()
    out.write("country_code,year_bin,age_bin,deaths,population\n")
    w = DEFAULT_BIN_WIDTH
    for code, (mult, p0, scale, growth, _) in COUNTRIES.items():
        for y in YEARS:
            for a in AGES:
                mid_a, mid_y = a + w / 2, y + w / 2
                pop = round(w * p0 * math.exp(-mid_a / scale) * (1 + growth) ** (mid_y - 2000))
                deaths = round(pop * w * annual_mortality(mid_a, mid_y, mult))
                out.write(f"{code},{y},{a},{deaths},{pop}\n")
    return out.getvalue()


def _bounds(mid: float) -> tuple[int, int]:
    # lower/upper at 6/7 and 8/7 of the midpoint, the width of the 15M-20M band
    return round(mid * 6 / 7), round(mid * 8 / 7)


def audience_csv() -> str:
    out = io.StringIO()
    out.write("country_code,age,lower,upper\n")
    peaks = {code: params[4] for code, params in COUNTRIES.items()} | AUDIENCE_ONLY
    for code, peak in peaks.items():
        for age in range(18, 65):
            lo, hi = _bounds(_users_at(age, peak))
            out.write(f"{code},{age},{lo},{hi}\n")
        over = sum(_users_at(a, peak) for a in range(65, 100))
        lo, hi = _bounds(over)
        out.write(f"{code},{OLDEST_BUCKET},{lo},{hi}\n")
    return out.getvalue()


def generate() -> dict[str, str]:
    return dict(zip(FILES, (demographics_csv(), audience_csv())))


def bundled_path(name: str):
    """Traversable for a bundled fixture file."""
    return resources.files("deadprofiles.data").joinpath("fixture", name)


if __name__ == "__main__":
    import sys
    from pathlib import Path

    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "data" / "fixture"
    target.mkdir(parents=True, exist_ok=True)
    for name, text in generate().items():
        (target / name).write_text(text, encoding="utf-8")
