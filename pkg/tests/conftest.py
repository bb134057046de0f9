import pytest

from crflow.checks import torus_mode_config
from crflow.flow import run_flow
from crflow.initial import make_initial_map


@pytest.fixture(scope="session")
def torus_mode_trajectory():
    """Single flat-circle mode on the m=1 grid, small cfl so the dissipation identity is tight."""
    cfg = torus_mode_config(1, 16, t_max=0.02, cadence=5, cfl_factor=0.05)
    h = make_initial_map(cfg.build_grid(), cfg.target, cfg.initial)
    return run_flow(h, cfg.flow)
