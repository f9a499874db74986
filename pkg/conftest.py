import pytest
from hypothesis import settings

from graph_core import build_star_grid
from soliton import make_nonlinearity

settings.register_profile("starwave", database=None, max_examples=25, deadline=None)
settings.load_profile("starwave")


@pytest.fixture
def cubic():
    """F(xi) = -xi, the cubic focusing NLS."""
    return make_nonlinearity([[1, -1.0]], allow_low_degree=True)


@pytest.fixture
def small_grid():
    """Three edges of length 20 with spacing 0.1."""
    return build_star_grid(3, 20.0, 201)


@pytest.fixture
def coarse_grid():
    return build_star_grid(3, 12.0, 61)


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    return path
