import numpy as np
import pytest

from stochfsi.montecarlo import RunConfig
from stochfsi.splitting import Problem


def make_config(**kw):
    base = dict(nz=4, nr=4, N=8, n_paths=20, batch_size=8)
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def small_problem():
    """4x4 mesh, N = 8, bump initial data and nonzero pressures."""
    cfg = make_config(initial={"kind": "bump", "eta_amplitude": 0.1, "v_amplitude": 0.2,
                               "u_amplitude": 0.3},
                      pressure_in={"kind": "sine", "mean": 1.0, "amplitude": 0.5, "period": 0.5},
                      pressure_out=0.25)
    return Problem(cfg)


@pytest.fixture(scope="session")
def default_problem():
    return Problem(RunConfig())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
