import numpy as np
import pytest

from wfmsim.channel import BlockageEvent, Position, RadioParams, Trajectory, snr_trace
from wfmsim.world import scene_init

BASE_STATIONS = [Position(x_m=-250.0, y_m=0.0), Position(x_m=250.0, y_m=0.0)]


@pytest.fixture
def radio():
    return RadioParams()


@pytest.fixture
def trajectory():
    return Trajectory()


@pytest.fixture
def handover_forecast(trajectory, radio):
    return snr_trace(trajectory, BASE_STATIONS, radio)


@pytest.fixture
def blocked_forecast(trajectory, radio):
    return snr_trace(trajectory, BASE_STATIONS, radio, [BlockageEvent(start_slot=7, end_slot=13)])


@pytest.fixture
def basic_scene():
    return scene_init("basic", 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def convex_reference():
    return 0.005 * np.arange(21, dtype=float) ** 2
