"""Main orchestrator for calibrated key exchanges."""

import asyncio
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence

import numpy as np

import config
from errors import ConfigError
from models.frames import ClickBlock, ClickCause, FrameBlock, SiftedKey
from models.reports import RateReport, SecurityReport
from models.scenario import RunConfig, RunMode
from tools.calibration import LineCalibration, SimulatedLine, calibrate_line_length
from tools.protocol import (
    QberEstimate,
    calibrate_power_bounds,
    estimate_qber,
    security_check,
)
from tools.rate_model import (
    coincidence_probability,
    detection_probability,
    distillation_factor,
    info_ab,
    predict,
    simulated_sift_probability,
)
from tools.schedule import TrainSchedule, build_schedule, stray_qber
from tools.stations import AliceStation, BobStation, combine_keys
from utils import make_streams

logger = logging.getLogger("qkdsim.orchestrator")

POWER_CALIBRATION_SAMPLES = 1000
CONSISTENCY_SIGMA = 3.0


@dataclass
class ExchangeResult:
    """Outcome of one key exchange; key is None whenever the run aborted."""

    key: Optional[SiftedKey]
    measured: RateReport
    predicted: RateReport
    security: SecurityReport
    estimate: Optional[QberEstimate]
    schedule: TrainSchedule
    calibration: LineCalibration
    clicks: ClickBlock = field(default_factory=ClickBlock)
    sifted_length: int = 0
    elapsed_s: float = 0.0
    aborted: Optional[str] = None
    consistent: Optional[bool] = None
    recalibrations: int = 0
    transcript_digest: Optional[str] = None
    expected_r_raw_hz: Optional[float] = None
    sifted: Optional[SiftedKey] = None
    frames: Optional[FrameBlock] = None

    @property
    def ok(self) -> bool:
        return self.aborted is None

    @property
    def r_raw_sigma_hz(self) -> float:
        """Counting error of the measured raw rate."""
        if self.elapsed_s <= 0:
            return 0.0
        return np.sqrt(max(self.sifted_length, 1)) / self.elapsed_s

    def r_raw_z(self, reference_hz: float) -> float:
        """Measured raw rate minus a reference, in counting standard deviations."""
        return (self.measured.r_raw_hz - reference_hz) / self.r_raw_sigma_hz


def plan_schedule(run: RunConfig, gate_offset_s: float = 0.0) -> TrainSchedule:
    """Train schedule of a run; Alice and Bob derive it independently."""
    params = run.params
    try:
        return build_schedule(
            params.fiber.length_km,
            params.storage_len_km,
            params.nu_hz,
            params.fiber.group_velocity_m_per_s,
            n_pulses_total=run.n_pulses_total,
            gate_offset_s=gate_offset_s,
            paper_compat=run.paper_compat,
        )
    except ValueError as e:
        raise ConfigError(str(e)) from e


def calibrate_for_run(run: RunConfig, rng: np.random.Generator) -> LineCalibration:
    """Line-length scan against the configured link."""
    params = run.params
    line = SimulatedLine(
        true_length_km=params.fiber.length_km,
        storage_len_km=params.storage_len_km,
        group_velocity=params.fiber.group_velocity_m_per_s,
        t_bob=params.t_bob,
        eta_bob=params.eta_bob,
        p_dark=run.detector.p_dark,
    )
    guess = run.calibration_guess_km if run.calibration_guess_km is not None else params.fiber.length_km
    return calibrate_line_length(line, guess, rng, run.detector.gate_width_s)


def predict_for_run(run: RunConfig, schedule: TrainSchedule) -> RateReport:
    """Analytic oracle for a run, with stray light set by the schedule."""
    params = run.params.with_changes(qber_stray=stray_qber(schedule, run.unscheduled_qber_stray))
    try:
        return predict(params, run.detector, run.eve)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def expected_coincidence_rate(run: RunConfig) -> float:
    params = run.params
    return coincidence_probability(detection_probability(params), params.visibility, run.detector.p_dark)


def expected_sifted_rate(run: RunConfig, schedule: TrainSchedule, gates: int,
                         elapsed_s: float) -> float:
    """Raw rate the detector simulation should reach for the gates it applied."""
    if elapsed_s <= 0:
        return 0.0
    per_gate = simulated_sift_probability(run.params, run.detector, schedule.train_size)
    return per_gate * gates / elapsed_s


def is_consistent(d_hat: float, predicted_qber: float, sample_size: int) -> bool:
    """|D_hat - D_pred| within three binomial standard deviations of the sample."""
    sigma = np.sqrt(max(predicted_qber * (1.0 - predicted_qber), 1e-12) / max(sample_size, 1))
    return abs(d_hat - predicted_qber) <= CONSISTENCY_SIGMA * sigma


def measured_report(bob: BobStation, key: SiftedKey, schedule: TrainSchedule,
                    elapsed_s: float, predicted: RateReport,
                    estimate: Optional[QberEstimate]) -> RateReport:
    """
    Rates and QBER budget as observed in the simulation.

    Errors are split by what triggered the click; the information terms use the
    sampled estimate, as a real user would.
    """
    n = len(key)
    errors = bob.cause_counts(key.alice_bits) if n else {cause: 0 for cause in ClickCause}
    opt = errors[ClickCause.PHOTON] / n if n else 0.0
    after = errors[ClickCause.AFTERPULSE] / n if n else 0.0
    dark = errors[ClickCause.DARK] / n if n else 0.0
    raw_sum = opt + after + dark
    fields = dict(
        p_det=min(bob.measured_p_det, 1.0),
        r_raw_hz=n / elapsed_s if elapsed_s > 0 else 0.0,
        prefactor_hz=predicted.prefactor_hz,
        qber_opt=opt,
        qber_dark=dark,
        qber_after=after,
        qber_stray=0.0,
        qber_total=min(raw_sum, 0.5),
        qber_clamped=raw_sum > 0.5,
        eta_tau=bob.live_fraction,
        eta_duty=schedule.duty_ratio,
        visibility=min(max(1.0 - 2.0 * opt, 0.0), 1.0),
    )
    if estimate is not None:
        d = estimate.d_clamped
        i_ab, i_ab_corrected = info_ab(d)
        dist = distillation_factor(d, predicted.i_ae)
        fields.update(
            i_ab=i_ab,
            i_ab_corrected=i_ab_corrected,
            i_ae=predicted.i_ae,
            eta_dist=dist,
            r_net_hz=dist * fields["r_raw_hz"],
        )
    return RateReport(**fields)


class ExchangeOrchestrator:
    """Runs calibration and key exchanges for one RunConfig."""

    def __init__(self, run: RunConfig,
                 recalibration_period_s: float = config.RECALIBRATION_PERIOD_S,
                 on_recalibration: Optional[Callable[[float], None]] = None,
                 keep_transcript: bool = False):
        """
        Initialize orchestrator.

        Args:
            run: Validated run configuration
            recalibration_period_s: Simulated seconds between recalibration events
            on_recalibration: Optional hook called with the simulated time
            keep_transcript: Keep every pulse's settings in the result (single-process runs)
        """
        self.run = run
        self.recalibration_period_s = recalibration_period_s
        self.on_recalibration = on_recalibration
        self.keep_transcript = keep_transcript
        self.logger = logging.getLogger("qkdsim.orchestrator")
        self.streams = make_streams(run.seed)
        self.line_calibration: Optional[LineCalibration] = None
        self.last_result: Optional[ExchangeResult] = None

    def calibrate(self) -> LineCalibration:
        """Scan the line once; later runs reuse the gate offset."""
        if self.line_calibration is None:
            self.logger.info(f"Calibrating line, seed {self.run.seed}")
            self.line_calibration = calibrate_for_run(self.run, self.streams["calibration"])
        return self.line_calibration

    def _recalibrate(self, t_sim: float):
        # Gate drift is not simulated; the event is only logged
        self.logger.info(f"Recalibration event at t={t_sim:.1f} s (simulated)")
        if self.on_recalibration:
            self.on_recalibration(t_sim)

    def run_exchange(self) -> ExchangeResult:
        """
        Execute a full single-process exchange.

        Returns:
            ExchangeResult; aborts are reported in the result, not raised
        """
        run = self.run
        calibration = self.calibrate()
        schedule = plan_schedule(run, calibration.gate_offset_s)
        predicted = predict_for_run(run, schedule)
        self.logger.info(
            f"Exchange: {run.n_pulses_total} pulses in {schedule.n_trains} trains "
            f"of {schedule.train_size}, loss {run.params.fiber.loss_db:.2f} dB"
        )

        streams = make_streams(run.seed)
        alice = AliceStation(schedule, run.n_pulses_total, streams, run.trojan_power)
        bob = BobStation(run.params, run.detector, schedule, streams)
        bounds = calibrate_power_bounds(alice.calibrate_power(POWER_CALIBRATION_SAMPLES))

        next_recal = self.recalibration_period_s
        recalibrations = 0
        trains_run = 0
        frame_blocks = []
        for train in range(schedule.n_trains):
            quarters = alice.prepare(train)
            detection = bob.detect(train, quarters)
            if self.keep_transcript:
                bits, bases = alice.settings
                start = train * schedule.train_size
                frame_blocks.append(FrameBlock(
                    pulse_index=np.arange(start, start + len(bits), dtype=np.int64),
                    alice_bit=bits,
                    alice_basis=bases,
                    bob_basis=bob.bases,
                ))
            keep = alice.sift(detection.single_pulses, bob.reveal_bases())
            bob.accept(keep)
            trains_run += 1

            while (train + 1) * schedule.train_period_s >= next_recal:
                self._recalibrate(next_recal)
                recalibrations += 1
                next_recal += self.recalibration_period_s

            if alice.power_alarm(bounds):
                self.logger.warning(f"Incoming power out of bounds in train {train}")
                break

        elapsed = trains_run * schedule.train_period_s
        security = security_check(
            bob.coincidences, expected_coincidence_rate(run), bob.gates,
            alice.power_readings, bounds,
        )
        sifted = combine_keys(alice.key, bob.key)
        result = self._finish(bob, sifted, security, schedule, calibration, predicted, elapsed,
                              sampling_rng=streams["sampling"])
        result.clicks = ClickBlock.concat(bob.click_blocks)
        result.recalibrations = recalibrations
        if frame_blocks:
            result.frames = FrameBlock.concat(frame_blocks)
        self.last_result = result
        return result

    def _finish(self, bob: BobStation, sifted: SiftedKey, security: SecurityReport,
                schedule: TrainSchedule, calibration: LineCalibration,
                predicted: RateReport, elapsed: float,
                estimate: Optional[QberEstimate] = None,
                sampling_rng: Optional[np.random.Generator] = None) -> ExchangeResult:
        """Estimate, apply the abort rules and assemble the result."""
        run = self.run
        aborted = None
        consistent = None
        if security.alert:
            aborted = "security: " + "; ".join(security.reasons)
        elif len(sifted) == 0:
            aborted = "no sifted bits"
        else:
            if estimate is None:
                estimate = estimate_qber(sifted, run.sample_fraction, sampling_rng)
            consistent = is_consistent(estimate.d_hat, predicted.qber_total, estimate.sample_size)
            if estimate.d_hat > run.qber_abort_threshold:
                aborted = f"qber {estimate.d_hat:.4f} above {run.qber_abort_threshold:.2f}"
            elif run.abort_on_inconsistency and not consistent:
                aborted = (
                    f"qber {estimate.d_hat:.4f} inconsistent with predicted "
                    f"{predicted.qber_total:.4f}"
                )

        measured = measured_report(bob, sifted, schedule, elapsed, predicted, estimate)
        if aborted:
            self.logger.warning(f"Exchange aborted: {aborted}")
            if estimate is not None:
                estimate = replace(estimate, key=SiftedKey.empty())
        else:
            self.logger.info(
                f"Exchange done: {len(estimate.key)} key bits, QBER {estimate.d_hat:.4f} "
                f"+- {estimate.ci_2sigma:.4f}"
            )
        return ExchangeResult(
            key=None if aborted else estimate.key,
            measured=measured,
            predicted=predicted,
            security=security,
            estimate=estimate,
            schedule=schedule,
            calibration=calibration,
            sifted_length=len(sifted),
            elapsed_s=elapsed,
            aborted=aborted,
            consistent=consistent,
            expected_r_raw_hz=expected_sifted_rate(run, schedule, bob.gates, elapsed),
            sifted=sifted,
        )

    async def run_networked(self, host: Optional[str] = None, port: int = 0) -> ExchangeResult:
        """
        Run Alice and Bob as two session endpoints in this process.

        With a host the endpoints talk over TCP, otherwise over an in-memory pipe.
        """
        from agents.transport import run_memory_session, run_tcp_session

        if host is None:
            alice, bob = await run_memory_session(self.run)
        else:
            alice, bob = await run_tcp_session(self.run, host, port)
        if alice.station is None or bob.station is None or bob.calibration is None:
            raise ConfigError(f"Session ended before the exchange started: {alice.state.reason}")

        schedule = alice.schedule
        elapsed = alice.trains_run * schedule.train_period_s
        predicted = predict_for_run(self.run, schedule)
        result = self._finish(
            bob.station,
            combine_keys(alice.station.key, bob.station.key),
            alice.security or security_check(
                bob.station.coincidences, expected_coincidence_rate(self.run), bob.station.gates,
                alice.station.power_readings, alice.power_bounds,
            ),
            bob.station.schedule,
            bob.calibration,
            predicted,
            elapsed,
            estimate=alice.estimate_with(bob.station.key),
            sampling_rng=make_streams(self.run.seed)["sampling"],
        )
        if alice.state.aborted and not result.aborted:
            result.aborted = alice.state.reason
            result.key = None
        result.transcript_digest = alice.state.transcript_digest
        result.clicks = ClickBlock.concat(bob.station.click_blocks)
        self.last_result = result
        return result

    async def run_batch(self, runs: Sequence[RunConfig]) -> Dict[int, ExchangeResult]:
        """
        Independent exchanges fanned out to worker threads.

        Returns:
            Results by position in ``runs``; failed runs are logged and left out
        """
        tasks = [asyncio.to_thread(ExchangeOrchestrator(run).run_exchange) for run in runs]
        results = await asyncio.gather(*tasks, return_exceptions=True)
        collected: Dict[int, ExchangeResult] = {}
        for i, result in enumerate(results):
            if isinstance(result, Exception):
                self.logger.warning(f"Run {i} failed: {result}")
                continue
            collected[i] = result
        return collected

    def get_last_summary(self) -> Optional[str]:
        """Plain-text summary of the last exchange."""
        result = self.last_result
        if result is None:
            return None
        lines = [
            f"Link: {self.run.params.fiber.length_km:.1f} km, {self.run.params.fiber.loss_db:.2f} dB",
            f"Trains: {result.schedule.n_trains} x {result.schedule.train_size} pulses",
            f"Sifted bits: {result.sifted_length}",
            f"R_raw measured {result.measured.r_raw_hz:.1f} Hz, predicted {result.predicted.r_raw_hz:.1f} Hz",
        ]
        if result.estimate is not None:
            lines.append(
                f"QBER estimate {100 * result.estimate.d_hat:.2f} +- {100 * result.estimate.ci_2sigma:.2f} %, "
                f"predicted {100 * result.predicted.qber_total:.2f} %"
            )
        lines.append(f"Security: {result.security.verdict.value}")
        lines.append(f"Aborted: {result.aborted}" if result.aborted else f"Key bits: {len(result.key)}")
        return "\n".join(lines)


def run_exchange(run: RunConfig) -> ExchangeResult:
    """Single-process exchange for one RunConfig."""
    orchestrator = ExchangeOrchestrator(run)
    if run.mode is RunMode.NETWORKED:
        return asyncio.run(orchestrator.run_networked())
    return orchestrator.run_exchange()
