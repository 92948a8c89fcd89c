import numpy as np
import pytest

from lorarffi.waveform import LoraConfig


@pytest.fixture
def sf7():
    return LoraConfig(7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
