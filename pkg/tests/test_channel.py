import math

import numpy as np
import pytest
from pydantic import ValidationError

from wfmsim.channel import (
    BlockageEvent,
    Position,
    RadioParams,
    SnrForecast,
    Trajectory,
    mobile_correction,
    noise_floor_dbm,
    path_loss_db,
    snr_db_at,
    snr_trace,
)
from wfmsim.errors import ConfigError, DomainError

from .conftest import BASE_STATIONS


class TestMobileCorrection:
    """a(h_r) closed form"""

    def test_default_height(self):
        assert mobile_correction(1.5) == pytest.approx(-0.000919, abs=1e-5)

    def test_log_term_vanishes(self):
        assert mobile_correction(1 / 11.75) == pytest.approx(-4.97, abs=1e-12)

    def test_ten_meters(self):
        assert mobile_correction(10.0) == pytest.approx(8.742, abs=1e-3)

    @pytest.mark.parametrize("height", [0.0, -1.0])
    def test_non_positive_height(self, height):
        with pytest.raises(DomainError):
            mobile_correction(height)


class TestPathLoss:
    """COST 231 Hata loss"""

    def test_one_km(self, radio):
        assert path_loss_db(1000.0, radio) == pytest.approx(144.386, abs=0.01)

    def test_hundred_meters(self, radio):
        assert path_loss_db(100.0, radio) == pytest.approx(106.036, abs=0.01)

    def test_doubling_slope(self, radio):
        assert path_loss_db(2000.0, radio) - path_loss_db(1000.0, radio) == pytest.approx(38.35 * math.log10(2), abs=1e-3)

    def test_strictly_increasing(self, radio):
        losses = [path_loss_db(d, radio) for d in np.linspace(1.0, 20000.0, 1000)]
        assert np.all(np.diff(losses) > 0)

    @pytest.mark.parametrize("distance", [0.0, -5.0])
    def test_non_positive_distance(self, distance):
        with pytest.raises(DomainError):
            path_loss_db(distance)


class TestNoiseFloor:
    def test_twenty_mhz(self):
        assert noise_floor_dbm(2.0e7) == pytest.approx(-100.990, abs=1e-3)

    def test_one_hertz(self):
        assert noise_floor_dbm(1.0) == -174.0

    def test_one_mhz(self):
        assert noise_floor_dbm(1.0e6) == pytest.approx(-114.0, abs=1e-9)

    def test_zero_bandwidth(self):
        with pytest.raises(DomainError):
            noise_floor_dbm(0.0)


class TestSnrAt:
    """Received power over noise floor"""

    def test_on_axis(self, radio):
        snr = snr_db_at(Position(x_m=0.0, y_m=0.0), Position(x_m=250.0, y_m=0.0), radio)
        assert snr == pytest.approx(4.69, abs=0.02)

    def test_off_axis(self, radio):
        snr = snr_db_at(Position(x_m=0.0, y_m=50.0), Position(x_m=250.0, y_m=0.0), radio)
        assert snr == pytest.approx(4.37, abs=0.02)

    def test_blockage_is_additive(self, radio):
        pos, bs = Position(x_m=0.0, y_m=50.0), Position(x_m=250.0, y_m=0.0)
        assert snr_db_at(pos, bs, radio) - snr_db_at(pos, bs, radio, 20.0) == pytest.approx(20.0, abs=1e-9)

    @pytest.mark.parametrize("k", [2.0, 3.5, 10.0])
    def test_distance_scaling(self, radio, k):
        bs = Position(x_m=0.0, y_m=0.0)
        near = snr_db_at(Position(x_m=120.0, y_m=0.0), bs, radio)
        far = snr_db_at(Position(x_m=120.0 * k, y_m=0.0), bs, radio)
        assert near - far == pytest.approx(38.35 * math.log10(k), abs=1e-6)

    def test_coincident_positions(self, radio):
        with pytest.raises(DomainError):
            snr_db_at(Position(x_m=1.0, y_m=1.0), Position(x_m=1.0, y_m=1.0), radio)


class TestSnrTrace:
    """Per-slot serving-BS SNR along the drive"""

    def test_length(self, handover_forecast, trajectory):
        assert len(handover_forecast.snr_db) == trajectory.num_slots + 1
        assert handover_forecast.num_slots == trajectory.num_slots

    def test_first_slot(self, handover_forecast):
        assert handover_forecast.snr_db[0] == pytest.approx(12.32, abs=0.05)

    def test_handover_at_midpoint(self, handover_forecast):
        serving = handover_forecast.serving_bs
        assert np.all(serving[:11] == 0)
        assert np.all(serving[11:] == 1)
        assert handover_forecast.min_slot() == 10
        assert handover_forecast.snr_db[10] == pytest.approx(4.37, abs=0.02)

    def test_reflection_symmetry(self, handover_forecast):
        np.testing.assert_allclose(handover_forecast.snr_db[::-1], handover_forecast.snr_db, atol=1e-9)

    def test_stationary_equidistant_user(self, radio):
        still = Trajectory(start=Position(x_m=0.0, y_m=10.0), end=Position(x_m=0.0, y_m=10.0), num_slots=5)
        forecast = snr_trace(still, BASE_STATIONS, radio)
        assert np.all(forecast.snr_db == forecast.snr_db[0])
        assert np.all(forecast.serving_bs == 0)

    def test_blockage_only_touches_its_slots(self, handover_forecast, blocked_forecast):
        diff = handover_forecast.snr_db - blocked_forecast.snr_db
        np.testing.assert_allclose(diff[7:14], 20.0, atol=1e-9)
        assert np.all(diff[:7] == 0.0)
        assert np.all(diff[14:] == 0.0)

    def test_positions_on_segment(self, handover_forecast):
        assert all(p.y_m == 50.0 and -100.0 <= p.x_m <= 100.0 for p in handover_forecast.positions)

    def test_no_base_station(self, trajectory, radio):
        with pytest.raises(ConfigError):
            snr_trace(trajectory, [], radio)


class TestTypes:
    def test_constant_forecast(self):
        forecast = SnrForecast.constant(5.0, 20)
        assert forecast.num_slots == 20
        assert np.all(forecast.snr_db == 5.0)

    def test_non_finite_position(self):
        with pytest.raises(ValidationError):
            Position(x_m=float("nan"), y_m=0.0)

    def test_blockage_order(self):
        with pytest.raises(ValidationError):
            BlockageEvent(start_slot=9, end_slot=7)

    def test_carrier_outside_hata_range(self):
        with pytest.raises(ValidationError):
            RadioParams(carrier_mhz=2500.0)

    def test_trajectory_needs_a_slot(self):
        with pytest.raises(ValidationError):
            Trajectory(num_slots=0)
