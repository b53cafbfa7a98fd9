import os

import pytest
from hypothesis import HealthCheck, settings

from lqmroute.domain import PoolConfig, ProviderSpec
from lqmroute.simenv import SyntheticPoolSpec, make_synthetic_pool

settings.register_profile("default", max_examples=200, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record a criterion verdict so it is echoed in the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def record(number, passed, detail):
        lines.append((number, passed, detail))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")


def three_provider_config(**kw):
    models = {n: {s: {"median_ms": m, "p95_ms": 1.6 * m} for s in ("idle", "moderate", "stressed")}
              for n, m in (("T", 100.0), ("B", 300.0), ("D", 900.0))}
    return PoolConfig(providers=[ProviderSpec("T", 3.0), ProviderSpec("B", 1.0), ProviderSpec("D", 2.0)],
                      latency_models=models, **kw)


@pytest.fixture
def collapse_pool():
    """High-heterogeneity pool: strongest provider slowest, weakest fastest."""
    return make_synthetic_pool(SyntheticPoolSpec(means=(0.643, 0.520, 0.123)))
