import numpy as np
import pytest

from coopsense.scenario import BsPose, RadioParams


@pytest.fixture
def radio_full():
    """Full-scale radio parameters."""
    return RadioParams()


@pytest.fixture
def radio_desk():
    """Reduced OFDM grid for fast signal-level tests."""
    return RadioParams(num_subcarriers=512, symbols_per_frame=320, sensing_symbols=32)


@pytest.fixture
def bs_origin():
    return BsPose(bs_id=0, position_m=(0.0, 0.0), boresight_rad=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
