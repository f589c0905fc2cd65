import numpy as np
import pytest
from hypothesis import settings

from gogpose import GridSpec, Person, canonical_skeleton

# compiled kernels make first-call timing unpredictable
settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def spec():
    return GridSpec()


@pytest.fixture(scope="session")
def small_spec():
    return GridSpec(input_width=64, input_height=64, output_stride=4)


@pytest.fixture(scope="session")
def skeleton():
    return canonical_skeleton()


def make_person(positions, scale=100.0, visible=None):
    """Person with 17 keypoints; positions is a (17, 2) array-like."""
    kps = np.ones((17, 3), dtype=np.float64)
    kps[:, :2] = np.asarray(positions, dtype=np.float64)
    if visible is not None:
        kps[:, 2] = visible
    return Person(keypoints=kps, scale=scale)


def spread_positions(base_x, base_y, step=3.0):
    """17 distinct positions in a compact cluster around a base point."""
    out = []
    for c in range(17):
        out.append((base_x + step * (c % 5), base_y + step * (c // 5)))
    return np.asarray(out)
