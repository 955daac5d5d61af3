import numpy as np
import pytest

from avatarlab.avatar import init_avatar
from avatarlab.headmodel import build_head


@pytest.fixture(scope="session")
def head():
    """Default head (subdiv 3, 1280 triangles)."""
    return build_head()


@pytest.fixture(scope="session")
def small_head():
    """Coarse head for fast pipeline tests."""
    return build_head(subdiv=2)


@pytest.fixture(scope="session")
def avatar(head):
    return init_avatar(head, gaussians_per_triangle=2)


def random_world(rng, n=30, spread=1.2):
    """Random free-floating Gaussians for renderer tests."""
    from avatarlab.avatar import WorldGaussians

    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return WorldGaussians(
        means=rng.normal(0.0, spread, (n, 3)),
        quats=q,
        log_scales=rng.uniform(-2.2, -0.8, (n, 3)),
        opacity_logits=rng.uniform(-1.0, 2.0, n),
        colors=rng.uniform(0.0, 1.0, (n, 3)),
    )


def random_camera(rng):
    from avatarlab.headmodel import CameraPose

    return CameraPose(
        distance=float(rng.uniform(5.0, 8.0)),
        fovy=float(rng.uniform(40.0, 70.0)),
        elevation=float(rng.uniform(-20.0, 20.0)),
        azimuth=float(rng.uniform(20.0, 160.0)),
    )
