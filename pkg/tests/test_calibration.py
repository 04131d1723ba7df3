"""Tests for the initialization measurements."""

import math

import numpy as np
import pytest

from errors import CalibrationError
from models.params import DetectorSpec, FiberSpec, SystemParams
from tools.calibration import (
    SimulatedLine,
    calibrate_line_length,
    measure_dark_counts,
    measure_visibility,
    power_samples,
)


def lake_link(qber_opt=0.0015) -> SystemParams:
    fiber = FiberSpec(length_km=22.0, loss_coeff_db_per_km=0.0, extra_loss_db=4.8)
    return SystemParams(fiber=fiber, qber_opt=qber_opt)


class TestLineLength:
    @pytest.mark.parametrize("true_km, guess_km", [(22.0, 20.0), (67.1, 67.0), (8.7, 12.0)])
    def test_recovers_length(self, true_km, guess_km):
        result = calibrate_line_length(SimulatedLine(true_length_km=true_km), guess_km, np.random.default_rng(0))
        assert result.measured_length_km == pytest.approx(true_km, abs=5e-4)
        assert result.peak_counts > 0

    @pytest.mark.parametrize("true_km, guess_km", [
        (10.0, 5.0), (27.0, 22.0), (17.0, 22.0), (62.1, 67.1), (72.1, 67.1),
    ])
    def test_window_edges(self, true_km, guess_km):
        result = calibrate_line_length(SimulatedLine(true_length_km=true_km), guess_km, np.random.default_rng(1))
        assert result.measured_length_km == pytest.approx(true_km, abs=5e-4)

    def test_guess_too_far_off(self):
        with pytest.raises(CalibrationError):
            calibrate_line_length(SimulatedLine(true_length_km=22.0), 16.0, np.random.default_rng(1))


class TestDarkCounts:
    def test_rate(self):
        n = 1_000_000
        d1, d2 = measure_dark_counts(DetectorSpec(p_dark=1e-3), n, np.random.default_rng(2))
        sigma = math.sqrt(1e-3 / n)
        assert abs(d1 - 1e-3) <= 3 * sigma
        assert abs(d2 - 1e-3) <= 3 * sigma

    def test_needs_gates(self):
        with pytest.raises(ValueError):
            measure_dark_counts(DetectorSpec(), 0, np.random.default_rng(0))


class TestVisibility:
    def test_perfect_interferometer(self):
        result = measure_visibility(lake_link(qber_opt=0.0), DetectorSpec(p_dark=0.0), 400_000,
                                    np.random.default_rng(3))
        assert result.mean == 1.0
        assert result.qber_opt == 0.0
        assert len(result.settings) == 4

    def test_incompatible_setting_rejected(self):
        with pytest.raises(ValueError):
            measure_visibility(lake_link(), DetectorSpec(), 1000, np.random.default_rng(0), settings=[(1, 0)])

    def test_wrong_clicks_follow_destructive_port(self):
        result = measure_visibility(lake_link(), DetectorSpec(), 400_000, np.random.default_rng(4))
        for row in result.settings:
            assert row.right_clicks > 50 * max(row.wrong_clicks, 1)

    @pytest.mark.slow
    @pytest.mark.parametrize("visibility", [0.9963, 0.9970, 0.9981])
    def test_interval_coverage(self, visibility):
        params = lake_link(qber_opt=(1.0 - visibility) / 2.0)
        covered = 0
        for seed in range(100):
            result = measure_visibility(params, DetectorSpec(), 1_000_000, np.random.default_rng(seed))
            covered += abs(result.mean - params.visibility) <= 2 * result.stderr
        assert covered >= 95


class TestPowerSamples:
    def test_honest_level(self):
        samples = power_samples(10_000, np.random.default_rng(5))
        assert samples.mean() == pytest.approx(1.0, abs=1e-3)

    def test_trojan_light_raises_level(self):
        samples = power_samples(1000, np.random.default_rng(6), trojan_power=0.5)
        assert samples.mean() == pytest.approx(1.5, abs=5e-3)

    def test_needs_samples(self):
        with pytest.raises(ValueError):
            power_samples(0, np.random.default_rng(0))
