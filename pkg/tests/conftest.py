import numpy as np
import pytest
from hypothesis import strategies as st

from agency_bridge.envs import InstanceSpec, random_instance

_ACCEPTANCE: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): end-to-end acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    key = (marker.args[0], marker.args[1])
    if rep.when == "call" or rep.failed:
        ok = rep.passed and _ACCEPTANCE.get(key, True)
        _ACCEPTANCE[key] = ok


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), ok in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}")


@st.composite
def random_models(draw, kind="mdp", horizon=1):
    """Small seeded random instances with strictly positive rows."""
    spec = InstanceSpec(
        kind,
        n_states=draw(st.integers(2, 5)),
        n_actions=draw(st.integers(1, 3)),
        n_obs=draw(st.integers(2, 4)),
        seed=draw(st.integers(0, 2**31)),
        reward_range=(0.0, 3.0),
        horizon=horizon,
    )
    return random_instance(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
