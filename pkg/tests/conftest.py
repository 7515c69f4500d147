import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from odechan.channel_oracle import ScattererScene, toy_scene

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy():
    return toy_scene(0)


def small_scene(n_antennas=4, n_subcarriers=4, include_los=True, seed=0, area=(0.0, 4.0, 0.0, 2.0)):
    r = np.random.default_rng(seed)
    pts = np.column_stack([r.uniform(-20, 25, 3), r.uniform(-15, 20, 3), r.uniform(0, 10, 3)])
    pts[:, 1] = np.where(np.abs(pts[:, 1] - 1) < 5, pts[:, 1] + 12, pts[:, 1])
    return ScattererScene(
        bs_position=[-15.0, 1.0, 8.0], array_axis=[0.0, 1.0, 0.0], scatterer_positions=pts,
        reflectivity=r.uniform(0.3, 1.0, 3), n_antennas=n_antennas, n_subcarriers=n_subcarriers,
        include_los=include_los, ue_area=area,
    )


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# ---------------------------------------------------------------- acceptance bookkeeping

_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    _CRITERIA.setdefault(mark.args[0], []).append((item.name, rep.passed, detail or rep.when))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        results = _CRITERIA[n]
        ok = all(passed for _, passed, _ in results)
        details = " | ".join(f"{name}: {d}" for name, _, d in results)
        tr.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {details}")


# ---------------------------------------------------------------- trained toy models (shared, slow)

@pytest.fixture(scope="session")
def toy_run():
    """Models trained once per session on toy_scene(0) with the default run recipe."""
    from odechan.experiments import ToyRun
    return ToyRun()
