import os
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_spd(rng, d, eps=0.1):
    A = rng.standard_normal((d, d))
    return A @ A.T + eps * np.eye(d)


TIMINGS = {}
VERDICTS = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def desk_run():
    from pgc.config import load
    return load(os.path.join(os.path.dirname(__file__), "..", "configs", "acceptance.toml"))


@pytest.fixture(scope="session")
def desk_benchmark(desk_run):
    """The full acceptance benchmark, run once per session."""
    from pgc.benchmark import run_benchmark
    t = time.perf_counter()
    res = run_benchmark(desk_run)
    TIMINGS["benchmark"] = time.perf_counter() - t
    return res


@pytest.fixture(scope="session")
def desk_bank(desk_benchmark):
    return desk_benchmark.bank


@pytest.fixture(scope="session")
def benchmark_seconds(desk_benchmark):
    return TIMINGS["benchmark"]


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records one acceptance line and asserts."""
    lines = request.config.stash.setdefault(VERDICTS, [])

    def record(n, ok, detail):
        lines.append(f"CRITERION {n:2d} {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    lines = terminalreporter.config.stash.get(VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
