import numpy as np
import pytest
import torch

from scenegen.field import HashGridConfig, ObjectField
from scenegen.geometry import ClickSelection, build_box
from scenegen.scene_cache import make_desk_cache


@pytest.fixture(scope="session")
def desk_cache():
    """Four 64px views of the checkered ground + sphere scene."""
    return make_desk_cache(n_views=4, size=64)


@pytest.fixture(scope="session")
def occluded_cache():
    """Same scene plus a thin wall through the middle."""
    return make_desk_cache(n_views=4, size=64, with_occluder=True)


@pytest.fixture(scope="session")
def desk_box(desk_cache):
    """A box placed on the ground plane from three clicks in view 0."""
    view = desk_cache.views[0]
    sel = ClickSelection(0, ((32.0, 40.0), (24.0, 40.0), (28.0, 32.0)),
                         (1.2, 1.2, 1.2))
    return build_box(sel, view.camera, view.depth_lookup)


@pytest.fixture(scope="session")
def small_grid():
    return HashGridConfig(n_levels=4, table_size_log2=12)


@pytest.fixture()
def small_field(desk_box, small_grid):
    return ObjectField(desk_box, grid=small_grid, density_bias=0.0, seed=11)


@pytest.fixture(autouse=True)
def _single_thread():
    """Keep torch deterministic and cheap on the CI-sized machine."""
    n = torch.get_num_threads()
    torch.set_num_threads(1)
    yield
    torch.set_num_threads(n)


def rand_unit(gen: np.random.Generator, n: int) -> np.ndarray:
    v = gen.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
