import numpy as np
import pytest

from eemon.model import ChannelSet, SystemParams, zf_nullspace


def crandn(rng, *shape):
    """Circular complex normal, unit variance per entry."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def random_channels(seed, n_tx=5, n_rx=3, n_m=4):
    rng = np.random.default_rng(seed)
    return ChannelSet(
        h_ds=crandn(rng),
        h_rs=crandn(rng),
        h_ts=crandn(rng, n_rx),
        h_dt=crandn(rng, n_tx),
        h_rt=crandn(rng, n_tx),
        h_mt=crandn(rng, n_m, n_tx),
        h_tt=crandn(rng, n_rx, n_tx),
    )


def default_test_params(**overrides):
    base = dict(p_s=0.01, p_max=10 ** (25 / 10 - 3), r_th=0.5)
    base.update(overrides)
    return SystemParams(**base)


@pytest.fixture
def channels5():
    return random_channels(7)


@pytest.fixture
def zf5(channels5):
    return zf_nullspace(channels5.h_tt)


@pytest.fixture
def params_default():
    return default_test_params()
