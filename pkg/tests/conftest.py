"""Shared generators for random polytopes and systems."""

import numpy as np
import pytest

from safecbf.geometry import Polytope


def random_cset(rng, m, extra_rows=None):
    """A bounded polytope with the origin strictly inside.

    Random halfspaces are combined with a randomly scaled box so the
    result is always bounded.
    """
    k = rng.integers(0, 2 * m + 3) if extra_rows is None else extra_rows
    D = rng.normal(size=(k, m))
    box = np.vstack([np.eye(m), -np.eye(m)])
    F = np.vstack([D, box * rng.uniform(0.5, 2.0, size=(2 * m, 1))])
    g = rng.uniform(0.2, 2.0, size=F.shape[0])
    return Polytope(F, g)


def random_ball_point(rng, m):
    return rng.uniform(-1.0, 1.0, size=m)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
