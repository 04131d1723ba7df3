"""Tests for train sizing."""

import pytest

from tools.schedule import TrainSchedule, build_schedule, stray_qber


class TestBuildSchedule:
    def test_train_fills_storage_line(self):
        schedule = build_schedule(22.0, 10.0, 5e6)
        assert schedule.train_size == 490
        assert schedule.no_crossing

    def test_paper_compat_train(self):
        assert build_schedule(22.0, 10.0, 5e6, paper_compat=True).train_size == 480

    def test_duty_ratio_follows_lengths(self):
        schedule = build_schedule(22.0, 10.0, 5e6)
        assert schedule.duty_ratio == pytest.approx(10.0 / 32.0, rel=0.025)
        assert schedule.train_period_s == pytest.approx(3.2e-4)

    def test_train_count(self):
        schedule = build_schedule(22.0, 10.0, 5e6, n_pulses_total=1000)
        assert schedule.n_trains == 3
        assert schedule.pulses_in_train(0, 1000) == 490
        assert schedule.pulses_in_train(2, 1000) == 20
        assert schedule.pulses_in_train(3, 1000) == 0

    def test_gate_times(self):
        schedule = build_schedule(22.0, 10.0, 5e6, gate_offset_s=1e-6)
        times = schedule.gate_times(1, 3)
        assert times[0] == pytest.approx(3.2e-4 + 1e-6)
        assert times[2] - times[1] == pytest.approx(2e-7)

    @pytest.mark.parametrize("l_ab, l_d", [(22.0, 0.0), (0.0, 10.0)])
    def test_lengths_must_be_positive(self, l_ab, l_d):
        with pytest.raises(ValueError):
            build_schedule(l_ab, l_d, 5e6)

    def test_storage_line_too_short(self):
        with pytest.raises(ValueError):
            build_schedule(22.0, 1e-5, 5e6)


class TestStrayQber:
    def test_scheduled_trains_have_no_backscatter(self):
        assert stray_qber(build_schedule(22.0, 10.0, 5e6), 0.05) == 0.0

    def test_oversized_train_crosses_returning_pulses(self):
        schedule = build_schedule(22.0, 10.0, 5e6)
        crossing = TrainSchedule(**{**schedule.__dict__, "train_size": 600})
        assert not crossing.no_crossing
        assert stray_qber(crossing, 0.05) == 0.05
