import numpy as np
import pytest

from relaybf.model import NetworkConfig, generate_channels


def make_instance(seed, n_t=2, antennas=(2, 2), rho=0.3, p_relay_db=20.0, p_s_db=10.0):
    r = len(antennas)
    p_relay = 10.0 ** (np.broadcast_to(p_relay_db, (r,)) / 10.0)
    cfg = NetworkConfig(n_t, tuple(antennas), 10.0 ** (p_s_db / 10.0), tuple(p_relay), rho=rho)
    return generate_channels(cfg, seed), cfg


def random_g(rng, n_t, p_s):
    g = rng.standard_normal(n_t) + 1j * rng.standard_normal(n_t)
    return g * np.sqrt(p_s) / np.linalg.norm(g)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
