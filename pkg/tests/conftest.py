import math
from pathlib import Path

import pytest

import SpinPhotonSim
from SpinPhotonSim.system import SystemParams, ghz_to_rad_per_ns

PRESETS = Path(SpinPhotonSim.__file__).parent / 'presets'


@pytest.fixture
def params():
    """5 T emitter: 8.5 GHz electron, 15.7 GHz hole splitting, 1.32 ns lifetime."""
    return SystemParams(ghz_to_rad_per_ns(8.5), ghz_to_rad_per_ns(15.7), 1 / 1.32)


@pytest.fixture
def params_9t():
    return SystemParams(ghz_to_rad_per_ns(16.0), ghz_to_rad_per_ns(28.3), 1 / 1.32)


@pytest.fixture
def presets():
    return PRESETS


def rabi(ghz):
    return 2 * math.pi * ghz
