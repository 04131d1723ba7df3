"""Tests for settings, sifting, QBER estimation and the security monitors."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from models.frames import ClickBlock, ClickRecord, Detector, FrameBlock, QuantumFrame, SiftedKey
from models.reports import Verdict
from tools.protocol import (
    assign_settings,
    calibrate_power_bounds,
    count_coincidences,
    estimate_qber,
    qber_from_sample,
    security_check,
    sift,
)


def frames_from(bits, bases_a, bases_b) -> FrameBlock:
    return FrameBlock.from_frames([
        QuantumFrame(pulse_index=i, alice_bit=b, alice_basis=a, bob_basis=c)
        for i, (b, a, c) in enumerate(zip(bits, bases_a, bases_b))
    ])


def clicks_from(pattern) -> ClickBlock:
    """pattern[i]: 0 no click, 1 D1, 2 D2, 3 both."""
    records = []
    for i, p in enumerate(pattern):
        if p & 1:
            records.append(ClickRecord(pulse_index=i, detector=Detector.D1, time_s=i * 2e-7, coincidence=p == 3))
        if p & 2:
            records.append(ClickRecord(pulse_index=i, detector=Detector.D2, time_s=i * 2e-7, coincidence=p == 3))
    return ClickBlock.from_records(records)


def reference_sift(bits, bases_a, bases_b, pattern):
    """Pulse by pulse, straight from the definition."""
    kept = []
    for i, (bit, a, b, p) in enumerate(zip(bits, bases_a, bases_b, pattern)):
        if a == b and p in (1, 2):
            kept.append((i, bit, 0 if p == 1 else 1))
    return kept


def as_tuples(key: SiftedKey):
    return list(zip(key.indices.tolist(), key.alice_bits.tolist(), key.bob_bits.tolist()))


class TestSettings:
    def test_reproducible(self):
        first = assign_settings(4, np.random.default_rng(7))
        second = assign_settings(4, np.random.default_rng(7))
        assert list(first) == list(second)

    def test_uniform_combinations(self):
        n = 1_000_000
        block = assign_settings(n, np.random.default_rng(8), np.random.default_rng(9))
        combos = 4 * block.alice_bit.astype(int) + 2 * block.alice_basis.astype(int) + block.bob_basis
        counts = np.bincount(combos, minlength=8)
        sigma = np.sqrt(n * (1 / 8) * (7 / 8))
        assert np.all(np.abs(counts - n / 8) <= 3 * sigma)

    def test_empty_request(self):
        with pytest.raises(ValueError):
            assign_settings(0, np.random.default_rng(0))


class TestSift:
    def test_basis_example(self):
        frames = frames_from([0, 1, 1, 0], [0, 1, 0, 1], [0, 0, 0, 1])
        key = sift(frames, clicks_from([1, 2, 0, 2]))
        assert key.indices.tolist() == [0, 3]
        assert key.alice_bits.tolist() == [0, 0]
        assert key.bob_bits.tolist() == [0, 1]

    def test_coincidence_excluded(self):
        frames = frames_from([0, 1], [0, 0], [0, 0])
        key = sift(frames, clicks_from([3, 2]))
        assert key.indices.tolist() == [1]

    def test_no_clicks(self):
        assert len(sift(frames_from([0], [0], [0]), ClickBlock())) == 0

    def test_click_outside_transcript(self):
        with pytest.raises(ValueError):
            sift(frames_from([0], [0], [0]), clicks_from([0, 1]))

    def test_duplicate_click_record(self):
        record = ClickRecord(pulse_index=0, detector=Detector.D1, time_s=0.0)
        with pytest.raises(ValueError):
            sift(frames_from([0], [0], [0]), [record, record])

    def test_exhaustive_against_reference(self):
        # Every assignment of (bit, basis A, basis B, click pattern) for up to three pulses
        per_pulse = list(itertools.product((0, 1), (0, 1), (0, 1), (0, 1, 2, 3)))
        for n in (1, 2, 3):
            for combo in itertools.product(per_pulse, repeat=n):
                bits, bases_a, bases_b, pattern = zip(*combo)
                key = sift(frames_from(bits, bases_a, bases_b), clicks_from(pattern))
                assert as_tuples(key) == reference_sift(bits, bases_a, bases_b, pattern)

    @settings(max_examples=500, deadline=None)
    @given(st.lists(
        st.tuples(st.integers(0, 1), st.integers(0, 1), st.integers(0, 1), st.integers(0, 3)),
        min_size=1, max_size=16,
    ))
    def test_random_instances_against_reference(self, pulses):
        bits, bases_a, bases_b, pattern = zip(*pulses)
        key = sift(frames_from(bits, bases_a, bases_b), clicks_from(pattern))
        assert as_tuples(key) == reference_sift(bits, bases_a, bases_b, pattern)


def planted_key(n, error_rate, rng) -> SiftedKey:
    alice = rng.integers(0, 2, n, dtype=np.uint8)
    flips = rng.random(n) < error_rate
    return SiftedKey(np.arange(n, dtype=np.int64), alice, (alice ^ flips).astype(np.uint8))


class TestQberEstimate:
    def test_identical_keys(self):
        key = planted_key(1000, 0.0, np.random.default_rng(0))
        estimate = estimate_qber(key, 0.1, np.random.default_rng(1))
        assert estimate.d_hat == 0.0
        assert estimate.ci_2sigma == 0.0
        assert estimate.sample_size == 100
        assert len(estimate.key) == 900

    def test_inverted_keys(self):
        alice = np.zeros(200, dtype=np.uint8)
        key = SiftedKey(np.arange(200, dtype=np.int64), alice, np.ones(200, dtype=np.uint8))
        estimate = estimate_qber(key, 0.1, np.random.default_rng(2))
        assert estimate.d_hat == 1.0
        assert estimate.clamped
        assert estimate.d_clamped == 0.5

    def test_disclosed_bits_removed(self):
        key = planted_key(500, 0.1, np.random.default_rng(3))
        estimate = estimate_qber(key, 0.2, np.random.default_rng(4))
        assert not np.isin(estimate.disclosed_indices, estimate.key.indices).any()
        assert len(estimate.key) + estimate.sample_size == len(key)

    def test_empty_key(self):
        with pytest.raises(ValueError):
            estimate_qber(SiftedKey.empty())

    def test_empty_sample(self):
        with pytest.raises(ValueError):
            qber_from_sample(np.zeros(0), np.zeros(0))

    def test_interval_coverage(self):
        rng = np.random.default_rng(5)
        covered = 0
        for _ in range(1000):
            estimate = estimate_qber(planted_key(20_000, 0.05, rng), 0.1, rng)
            sigma = np.sqrt(0.05 * 0.95 / estimate.sample_size)
            covered += abs(estimate.d_hat - 0.05) <= 2 * sigma
        assert covered >= 930


class TestSecurityMonitors:
    def test_honest_statistics(self):
        bounds = calibrate_power_bounds(1.0 + 0.01 * np.random.default_rng(0).standard_normal(1000))
        report = security_check(4, 4e-7, 10_000_000, [1.0, 1.001, 0.999], bounds)
        assert report.verdict is Verdict.OK
        assert not report.alert

    def test_trojan_horse_power(self):
        bounds = (0.9, 1.1)
        report = security_check(0, 4e-7, 10_000_000, [1.0, 2.2], bounds)
        assert report.alert
        assert report.power_violations == 1

    def test_inflated_coincidences(self):
        expected_rate = 4e-7
        report = security_check(40, expected_rate, 10_000_000, [1.0], (0.9, 1.1))
        assert report.alert
        assert "coincidences" in report.reasons[0]

    def test_single_coincidence_in_short_run(self):
        report = security_check(1, 1e-6, 10_000, [1.0], (0.9, 1.1))
        assert not report.alert

    def test_count_from_click_stream(self):
        assert count_coincidences(clicks_from([3, 1, 3, 0])) == 2

    def test_power_bounds_need_samples(self):
        with pytest.raises(ValueError):
            calibrate_power_bounds([1.0])
