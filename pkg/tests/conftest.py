import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from railbreak.harness.bundle import train_bundle  # noqa: E402
from railbreak.harness.dataset import simulate_training  # noqa: E402
from railbreak.harness.suite import ScenarioSuite, Simulator  # noqa: E402

settings.register_profile("default", max_examples=50, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

TRAIN_SEED = 0
TEST_SEED = 1


@pytest.fixture(scope="session")
def small_sim():
    """Dry simulator with a short degree-8 code; cheap enough for unit tests."""
    return Simulator("dry", kasami_degree=8)


@pytest.fixture(scope="session")
def small_bundle(small_sim):
    suite = ScenarioSuite(trials_per_snr=20, kasami_degree=8, seed_base=TRAIN_SEED)
    rows = simulate_training(suite, {"dry": small_sim})
    return train_bundle(rows, meta=small_sim.describe())


class _Reference:
    """Default K=500 training suites (degree 14), built once per session."""

    def __init__(self):
        self._cache = {}

    def get(self, soil):
        if soil not in self._cache:
            sim = Simulator(soil)
            suite = ScenarioSuite(soils=(soil,), seed_base=TRAIN_SEED)
            rows = simulate_training(suite, {soil: sim})
            bundle = train_bundle(rows, meta=sim.describe())
            self._cache[soil] = (sim, rows, bundle)
        return self._cache[soil]


@pytest.fixture(scope="session")
def reference():
    return _Reference()


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Records the outcome of each acceptance criterion for the summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, title, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {title}  [{detail}]")
