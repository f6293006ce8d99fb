import hypothesis
import numpy as np
import pytest

from soilpb.model import Theta
from soilpb.series import synthetic_exposures
from soilpb.simulator import SimConfig, simulate, year_weight_preset

np.seterr(all="warn", under="ignore")

hypothesis.settings.register_profile("default", max_examples=60, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile("default")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")


@pytest.fixture(scope="session")
def exposures():
    return synthetic_exposures(1986, 1902)


def make_data(exposures, theta=Theta(15.0, 200.0, 10.0), sigma=1.0, n=300, seed=0, preset="uniform"):
    paint, gas = exposures
    cfg = SimConfig(theta, sigma, paint, gas, year_weight_preset(preset), n, seed)
    return simulate(cfg)


@pytest.fixture(scope="session")
def sim_data(exposures):
    return make_data(exposures, seed=11)
