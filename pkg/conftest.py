import os
import textwrap

import pytest

from field_grid import GridSpec

_ROOT = os.path.dirname(os.path.abspath(__file__))
BASELINE = os.path.join(_ROOT, "scenarios", "baseline.toml")
LAMBDA = 1064e-9


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run full-grid reproduction tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-grid reproduction tests (need --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _single_worker(monkeypatch):
    monkeypatch.setenv("RBC_WORKERS", "1")
    import sweep_engine
    sweep_engine.clear_cache()
    yield
    sweep_engine.clear_cache()


@pytest.fixture
def baseline_path():
    return BASELINE


@pytest.fixture
def small_grid():
    return GridSpec(64, 10e-3)


SMALL_SCENARIO = textwrap.dedent("""\
    [scenario]
    name = "small"

    [source]
    wavelength = "1064 nm"

    [grid]
    n = 64
    half_width = "10 mm"

    [solver]
    tol = 1e-6
    max_round_trips = 1000
    seed = 1

    [channel]
    distance_z = "5 m"

    [laser]
    P_i = "200 W"
    A_g = "1.7 mm^2"
    R_o = 0.93
    I_s = "1260 W/cm^2"
""")


@pytest.fixture
def small_scenario_text():
    return SMALL_SCENARIO


@pytest.fixture
def write_toml(tmp_path):
    def _write(name, text):
        path = tmp_path / name
        path.write_text(textwrap.dedent(text), encoding="utf-8")
        return path
    return _write
