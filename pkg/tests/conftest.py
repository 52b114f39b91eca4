import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from geometry_channel import ScatterPoint, ScatterScene, SystemConfig, UcaGeometry  # noqa: E402
from optimizer import LinkChannels  # noqa: E402
from waveform import allocate_modes  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    return SystemConfig(N_t=8, N_f=4, N_f_prime=4)


@pytest.fixture
def geometry():
    return UcaGeometry()


@pytest.fixture
def single_point_scene():
    return ScatterScene(points=(ScatterPoint(30.0, math.radians(40.0), math.radians(30.0)),), v=3.0)


def random_links(rng, N_t=4, N_f=2, K=2, N_J=1, sigma2=0.1, P_J=0.5):
    """Random Rayleigh channels, small enough to exercise every AO block quickly."""
    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2)

    return LinkChannels(H=cn(K, N_f, N_t, N_t), H_J=cn(K, N_f, N_t, N_J), P_J=P_J, sigma2=sigma2)


@pytest.fixture
def links(rng):
    return random_links(rng)


@pytest.fixture
def small_allocation():
    # N_t=4: sensing takes mode −1 (slot 1), users split the remaining three
    return allocate_modes(4, 2, (1, 2), 1, "0x0", "0x5eed")


@pytest.fixture
def make_links():
    return random_links
