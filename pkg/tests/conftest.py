import numpy as np
import pytest

from deadprofiles import fixture, ingest, project


@pytest.fixture(scope="session")
def countries():
    return ingest.load_countries()


@pytest.fixture(scope="session")
def bundled(countries):
    with fixture.bundled_path("demographics.csv").open() as fh:
        demo = ingest.parse_demographic_table(fh, countries)
    with fixture.bundled_path("audience.csv").open() as fh:
        aud = ingest.parse_audience_snapshot(fh, countries)
    return demo, aud


@pytest.fixture(scope="session")
def pipeline(bundled):
    demo, aud = bundled
    scenarios = [project.ScenarioConfig.scenario_a(), project.ScenarioConfig.scenario_b()]
    return project.run_pipeline(demo.tables, aud.snapshots, scenarios)


@pytest.fixture
def rng():
    return np.random.default_rng(20180101)


_ACCEPTANCE = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
