import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dmdvlc.core import build_layout
from dmdvlc.optics import OpticalConfig, ProjectionModel, project_channels
from dmdvlc.sensor import SensorConfig

settings.register_profile("repo", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

# lossless link: one event per mirror transition
IDEAL_SENSOR = SensorConfig(theta_on=1.0, theta_off=1.0, i_dark=30.0)
IDEAL_OPTICS = OpticalConfig(channel_on_lux=100.0)

# criterion number -> [title, outcomes, details]; a criterion may span several tests
_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call":
        return
    n, title = mark.args
    entry = _CRITERIA.setdefault(n, [title, [], []])
    entry[1].append(rep.passed)
    detail = dict(item.user_properties).get("detail")
    if detail:
        entry[2].append(detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, outcomes, details = _CRITERIA[n]
        status = "PASS" if all(outcomes) else "FAIL"
        line = f"criterion {n} [{status}] {title} ({sum(outcomes)}/{len(outcomes)} tests)"
        terminalreporter.write_line(f"{line}: {'; '.join(details)}" if details else line)


@pytest.fixture
def small_layout():
    """7x5 grid on a 112x80 mirror array, 1 kHz."""
    return build_layout(112, 80, 8, 1, 7, 5, rate=1000.0)


@pytest.fixture
def small_footprints(small_layout):
    model = ProjectionModel.centered(small_layout, 48, 40, scale=3.0)
    return project_channels(small_layout, model)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
