"""Tests for photon statistics, routing and the gated detector."""

import math

import numpy as np
import pytest

from models.frames import ClickCause, Detector, QuantumFrame
from models.params import AfterpulseProfile, DetectorSpec
from tools.photonics import GatedDetector, make_detectors, pulse_arrivals, routing_probs, train_arrivals


def quiet_detector(dead_time_s=0.0, p_dark=0.0, amplitude=0.0, efficiency=1.0) -> GatedDetector:
    return GatedDetector(
        id=Detector.D1,
        p_dark=p_dark,
        efficiency=efficiency,
        dead_time_s=dead_time_s,
        afterpulse=AfterpulseProfile(amplitude=amplitude, time_const_s=1e-6),
    )


class TestRouting:
    def test_constructive_interference(self):
        assert routing_probs(0.0, 1.0) == (1.0, 0.0)

    @pytest.mark.parametrize("visibility", [0.0, 0.5, 0.997, 1.0])
    def test_incompatible_bases(self, visibility):
        assert routing_probs(math.pi / 2, visibility) == (0.5, 0.5)

    def test_destructive_interference(self):
        p_d1, p_d2 = routing_probs(math.pi, 0.994)
        assert p_d1 == pytest.approx(0.003)
        assert p_d2 == pytest.approx(0.997)

    def test_visibility_out_of_range(self):
        with pytest.raises(ValueError):
            routing_probs(0.0, 1.2)


class TestArrivals:
    def test_opaque_channel(self):
        rng = np.random.default_rng(1)
        frame = QuantumFrame(pulse_index=0, alice_bit=0, alice_basis=0, bob_basis=0)
        for _ in range(100):
            assert pulse_arrivals(frame, 0.2, 0.0, rng) == (0, 0)

    def test_mean_photon_number(self):
        rng = np.random.default_rng(2)
        n = 1_000_000
        n_d1, n_d2 = train_arrivals(np.zeros(n, dtype=np.int64), 0.2, 0.6, 1.0, rng)
        expected = 0.2 * 0.6
        assert not n_d2.any()
        assert abs(n_d1.mean() - expected) <= 3 * math.sqrt(expected / n)

    def test_mu_must_be_positive(self):
        frame = QuantumFrame(pulse_index=0, alice_bit=0, alice_basis=0, bob_basis=0)
        with pytest.raises(ValueError):
            pulse_arrivals(frame, 0.0, 0.5, np.random.default_rng(0))


class TestGatedDetector:
    def test_dark_free_empty_gate(self):
        detector = quiet_detector()
        assert not detector.gate(0, 0.0, np.random.default_rng(0))

    def test_certain_detection(self):
        detector = quiet_detector(dead_time_s=1e-6)
        assert detector.gate(1, 0.0, np.random.default_rng(0))
        assert detector.dead_until == pytest.approx(1e-6)

    def test_gate_inside_dead_time_is_skipped(self):
        detector = quiet_detector(dead_time_s=1e-6)
        rng = np.random.default_rng(0)
        assert detector.gate(1, 0.0, rng)
        assert not detector.gate(1, 5e-7, rng)
        assert detector.gate(1, 1e-6, rng)

    def test_gate_times_must_increase(self):
        detector = quiet_detector()
        rng = np.random.default_rng(0)
        detector.gate(0, 1.0, rng)
        with pytest.raises(ValueError):
            detector.gate(0, 1.0, rng)

    def test_train_clicks_spaced_by_dead_time(self):
        detector = quiet_detector(dead_time_s=1e-6)
        times = np.arange(50) * 2e-7
        result = detector.fire_train(times, np.ones(50, dtype=np.int64), np.random.default_rng(0))
        np.testing.assert_array_equal(result.positions, np.arange(0, 50, 5))
        assert result.live_gates == 10
        assert (result.causes == ClickCause.PHOTON).all()

    def test_dead_time_carries_across_trains(self):
        detector = quiet_detector(dead_time_s=1e-6)
        rng = np.random.default_rng(0)
        first = detector.fire_train(np.array([0.0]), np.array([1]), rng)
        second = detector.fire_train(np.array([4e-7, 8e-7, 1.2e-6]), np.ones(3, dtype=np.int64), rng)
        assert list(first.positions) == [0]
        assert list(second.positions) == [2]

    def test_dark_count_rate(self):
        detector = quiet_detector(p_dark=0.01)
        n = 100_000
        clicks = detector.fire_memoryless(np.zeros(n, dtype=np.int64), np.random.default_rng(3))
        assert abs(clicks.mean() - 0.01) <= 3 * math.sqrt(0.01 * 0.99 / n)

    def test_dark_causes(self):
        detector = quiet_detector(p_dark=0.05)
        times = np.arange(2000) * 2e-7
        result = detector.fire_train(times, np.zeros(2000, dtype=np.int64), np.random.default_rng(4))
        assert len(result.positions) > 0
        assert (result.causes == ClickCause.DARK).all()
        assert result.photon_live_clicks == 0

    def test_afterpulses_follow_an_avalanche(self):
        detector = quiet_detector(amplitude=0.5)
        times = np.arange(100) * 2e-7
        photons = np.zeros(100, dtype=np.int64)
        photons[0] = 1
        result = detector.fire_train(times, photons, np.random.default_rng(5))
        assert result.positions[0] == 0
        assert result.causes[0] == ClickCause.PHOTON
        assert len(result.positions) > 1
        assert (result.causes[1:] == ClickCause.AFTERPULSE).all()

    def test_afterpulse_probability_decays(self):
        detector = quiet_detector(amplitude=0.1)
        detector.gate(1, 0.0, np.random.default_rng(0))
        early, late = detector.afterpulse_probability(np.array([1e-7, 5e-6]))
        assert early > late > 0

    def test_no_afterpulse_at_the_avalanche_gate(self):
        detector = quiet_detector(amplitude=0.1)
        detector.gate(1, 0.0, np.random.default_rng(0))
        assert detector.afterpulse_probability(0.0) == 0.0

    def test_make_detectors(self):
        d1, d2 = make_detectors(DetectorSpec(), efficiency=0.1, dead_time_s=4e-6)
        assert (d1.id, d2.id) == (Detector.D1, Detector.D2)
        assert d1.dead_time_s == d2.dead_time_s == 4e-6
