import numpy as np
import pytest

from chronofield.encoding import GridConfig
from chronofield.field import FieldConfig, init_parameters


@pytest.fixture
def toy_grid() -> GridConfig:
    return GridConfig(levels=3, channels=2, table_size=2 ** 10, r_min=4,
                      r_max_factor=8.0, half_extent=2.0)


@pytest.fixture
def toy_config(toy_grid) -> FieldConfig:
    return FieldConfig(grid=toy_grid)


@pytest.fixture
def toy_field64(toy_config):
    """Small float64 field with the table scaled up so densities vary."""
    field = init_parameters(toy_config, seed=7, dtype=np.float64)
    field.theta["table"] *= 3000.0
    return field


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_rays(rng, n, origin=(0.0, 0.0, 5.0), toward=(0.0, 0.0, -1.0),
                origin_spread=0.3, dir_spread=0.05):
    origins = np.tile(np.asarray(origin, float), (n, 1)) + rng.normal(0, origin_spread, (n, 3))
    dirs = np.tile(np.asarray(toward, float), (n, 1)) + rng.normal(0, dir_spread, (n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return origins, dirs
