import time

import pytest
from hypothesis import HealthCheck, settings

from zslbench import SYNTH_PRESETS, default_config, generate_synthetic, run_benchmark

settings.register_profile(
    "suite",
    derandomize=True,
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

_BENCH_CACHE = {}
_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collector for the per-criterion verdict lines (see test_acceptance)."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _bench(scope, tmp_path_factory):
    """Run the default benchmark once per scope and cache (ledger, seconds)."""
    if scope not in _BENCH_CACHE:
        out = tmp_path_factory.mktemp(f"bench_{scope}")
        cfg = default_config(str(out), scope=scope)
        t0 = time.perf_counter()
        led = run_benchmark(cfg)
        _BENCH_CACHE[scope] = (led, time.perf_counter() - t0)
    return _BENCH_CACHE[scope]


@pytest.fixture(scope="session")
def bench_all(tmp_path_factory):
    return _bench("all", tmp_path_factory)


@pytest.fixture(scope="session")
def bench_oc(tmp_path_factory):
    return _bench("only_correct", tmp_path_factory)


@pytest.fixture(scope="session")
def cub_bundle():
    return generate_synthetic(SYNTH_PRESETS["cub_like"], 17)
