"""Command-line entry point: ingest, fit, project, bootstrap and write reports."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from datetime import datetime, timezone
from pathlib import Path

from . import __version__, fixture, ingest, report
from .project import ProjectionError, ScenarioConfig, projection_to_dict, run_pipeline
from .uncertainty import BootstrapConfig, bootstrap_country, write_posterior

log = logging.getLogger("deadprofiles")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="deadprofiles",
        description="Project deceased users' profiles per country from 2018 to 2100.",
    )
    src = p.add_argument_group("inputs")
    src.add_argument("--demographics", type=Path, help="CSV of binned deaths and population")
    src.add_argument("--audience", type=Path, help="CSV or JSON audience snapshot")
    src.add_argument("--fixture", action="store_true", help="use the bundled synthetic inputs")
    src.add_argument("--unit", choices=("units", "thousands"), default="units",
                     help="unit of the demographic counts (default: units)")
    p.add_argument("--scenario", choices=("A", "B", "both"), default="both")
    p.add_argument("--growth-rate", type=float, default=None,
                   help="annual user growth in scenario B (default: 0.13)")
    p.add_argument("--min-users", type=int, default=10_000,
                   help="drop countries with fewer users in the snapshot (default: 10000)")
    p.add_argument("--bootstrap", type=int, default=500,
                   help="bootstrap replicates per country; 0 skips uncertainty (default: 500)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--countries", type=lambda s: [c.strip() for c in s.split(",") if c.strip()],
                   help="comma-separated ISO alpha-3 codes to restrict the run to")
    p.add_argument("--top", type=int, default=10, help="rows in the country table (default: 10)")
    p.add_argument("--workers", type=int, default=1, help="processes for bootstrap replicates")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--dump-posterior", action="store_true",
                   help="also write every replicate total to posterior.csv")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


class UsageError(Exception):
    pass


def _scenarios(args) -> list[ScenarioConfig]:
    if args.growth_rate is not None and args.scenario == "A":
        warnings.warn("--growth-rate has no effect on scenario A", stacklevel=2)
    rate = 0.13 if args.growth_rate is None else args.growth_rate
    if rate < 0:
        raise UsageError("--growth-rate must be non-negative")
    out = []
    if args.scenario in ("A", "both"):
        out.append(ScenarioConfig.scenario_a())
    if args.scenario in ("B", "both"):
        out.append(ScenarioConfig.scenario_b(rate))
    return out


def _inputs(args):
    if args.fixture:
        if args.demographics or args.audience:
            raise UsageError("--fixture cannot be combined with --demographics/--audience")
        return {name: fixture.bundled_path(name) for name in fixture.FILES}, "bundled fixture"
    if not (args.demographics and args.audience):
        raise UsageError("give --demographics and --audience, or --fixture")
    for path in (args.demographics, args.audience):
        if not path.is_file():
            raise UsageError(f"input file not found: {path}")
    return {"demographics.csv": args.demographics, "audience.csv": args.audience}, "files"


def _write(out: Path, name: str, writer, written: dict) -> None:
    path = out / name
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer(fh)
    written[name] = report.file_digest(path)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    try:
        if args.bootstrap < 0 or args.workers < 1 or args.top < 1 or args.min_users < 0:
            raise UsageError("--bootstrap, --min-users must be >= 0; --workers, --top >= 1")
        scenarios = _scenarios(args)
        paths, source = _inputs(args)
        try:
            args.out.mkdir(parents=True, exist_ok=True)
            probe = args.out / ".write-test"
            probe.write_text("")
            probe.unlink()
        except OSError as exc:
            raise UsageError(f"output directory {args.out} is not writable: {exc}") from exc

        countries = ingest.load_countries()
        with paths["demographics.csv"].open("r", encoding="utf-8") as fh:
            demo = ingest.parse_demographic_table(fh, countries, unit=args.unit)
        with paths["audience.csv"].open("r", encoding="utf-8") as fh:
            aud = ingest.parse_audience_snapshot(fh, countries)
        if args.countries:
            unknown = [c for c in args.countries if c not in countries]
            if unknown:
                raise UsageError(f"unknown country codes: {', '.join(unknown)}")

        result = run_pipeline(demo.tables, aud.snapshots, scenarios, min_users=args.min_users,
                              countries=args.countries)
        posterior = []
        if args.bootstrap:
            bcfg = BootstrapConfig(args.bootstrap, args.seed, args.workers)
            for code in sorted(result.models):
                points = {v: result.projections[v][code] for v in result.projections}
                res = bootstrap_country(demo.tables[code], aud.snapshots[code], scenarios, bcfg,
                                        points=points)
                for p in points.values():
                    res.attach(p)
                posterior.append(res)
                log.info("%s: %d replicates, %d failed", code, args.bootstrap, res.failures)

        written: dict[str, str] = {}
        for v, by_country in result.projections.items():
            projections = [by_country[c] for c in sorted(by_country)]
            _write(args.out, f"tables_continents_{v}.csv",
                   report.aggregate_by_continent(projections).write_csv, written)
            _write(args.out, f"tables_countries_{v}.csv",
                   report.top_countries_table(projections, args.top).write_csv, written)
            _write(args.out, f"timeseries_{v}.csv",
                   lambda fh: report.timeseries_export(projections, fh), written)
            records = report.heatmap_records(projections, countries, result.excluded,
                                             result.unprojectable)
            _write(args.out, f"heatmap_{v}.csv", lambda fh: report.heatmap_export(records, fh), written)
            doc = {"scenario": v, "countries": [projection_to_dict(p) for p in projections],
                   "excluded": list(result.excluded), "unprojectable": result.unprojectable}
            _write(args.out, f"projections_{v}.json",
                   lambda fh: fh.write(json.dumps(doc, indent=1) + "\n"), written)
        if args.dump_posterior:
            _write(args.out, "posterior.csv", lambda fh: write_posterior(posterior, fh), written)

        flagged = [r.country for r in posterior if r.flagged]
        config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
        config.update(source=source, flagged=flagged)
        manifest = report.RunManifest(
            __version__, args.seed, config,
            {name: report.file_digest(path) for name, path in paths.items()},
            written, started, datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )
        (args.out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    except (UsageError, ingest.IngestError, ProjectionError, OSError) as exc:
        print(f"deadprofiles: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
