import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def two_point_loop():
    """Loop with points (0, 0, +-0.25)."""
    from wlcasimir.loopgen import loop_from_increments

    return loop_from_increments([[0.0, 0.0, 0.5], [0.0, 0.0, -0.5]])


@pytest.fixture(scope="session")
def small_ensemble():
    from wlcasimir.loopgen import EnsembleMeta, generate_ensemble

    return generate_ensemble(EnsembleMeta(40, 256, 11))


def naive_bridge(rng, n):
    """Brownian motion on n steps pinned back to its start, then centered.

    Coded independently of the library sampler: draws the path point by
    point and removes the linear drift towards the endpoint.
    """
    w = np.zeros((n + 1, 3))
    for k in range(n):
        w[k + 1] = w[k] + rng.normal(0.0, np.sqrt(2.0 / n), size=3)
    t = np.arange(n + 1)[:, None] / n
    b = (w - t * w[n])[:n]
    return b - b.mean(axis=0)
