"""
Analytic link model: raw rate, QBER budget, information quantities and net rate.

Everything here is a pure function over immutable parameter models, so it is
safe to call from any thread and serves as the oracle the Monte Carlo engine is
checked against.
"""

import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

import config
from models.params import AfterpulseProfile, DetectorSpec, EveModel, SystemParams
from models.reports import RateReport

logger = logging.getLogger("qkdsim.rate_model")

QBER_CEILING = 0.5
AFTERPULSE_TERM_FLOOR = 1e-15


def transmission_from_loss(loss_db: float) -> float:
    """Linear transmission of a loss given in dB."""
    if loss_db < 0:
        raise ValueError(f"Loss must be non-negative, got {loss_db} dB")
    return 10.0 ** (-loss_db / 10.0)


def loss_from_transmission(transmission: float) -> float:
    """Loss in dB of a linear transmission in (0, 1]."""
    if not 0.0 < transmission <= 1.0:
        raise ValueError(f"Transmission must lie in (0, 1], got {transmission}")
    return -10.0 * math.log10(transmission)


def eta_duty(storage_len_km: float, link_len_km: float) -> float:
    """Duty cycle of the emitted pulse trains, l_D / (l_AB + l_D)."""
    if storage_len_km <= 0:
        raise ValueError("Storage line length must be positive")
    if link_len_km < 0:
        raise ValueError("Link length must be non-negative")
    return storage_len_km / (link_len_km + storage_len_km)


def eta_tau(nu_hz: float, p_det: float, dead_time_s: float) -> float:
    """Rate reduction caused by the dead time, 1 / (1 + nu p_det tau)."""
    if nu_hz < 0 or p_det < 0 or dead_time_s < 0:
        raise ValueError("eta_tau inputs must be non-negative")
    return 1.0 / (1.0 + nu_hz * p_det * dead_time_s)


def _clamp_qber(value: float, label: str) -> float:
    if value > QBER_CEILING:
        logger.warning(f"{label} estimate {value:.4f} exceeds 0.5, clamped")
        return QBER_CEILING
    return max(value, 0.0)


def qber_dark(p_dark: float, p_det: float) -> float:
    """Errors from dark counts: p_dark / p_det, clamped to [0, 0.5]."""
    if p_det <= 0 or p_det > 1:
        raise ValueError(f"p_det must lie in (0, 1], got {p_det}")
    if p_dark < 0:
        raise ValueError("p_dark must be non-negative")
    return _clamp_qber(p_dark / p_det, "QBER_dark")


def qber_after(profile: AfterpulseProfile, p_det: float, nu_hz: float, dead_time_s: float) -> float:
    """
    Errors from afterpulses.

    Sums the afterpulse probability over the gates between two detections,
    starting at the first gate after the dead time, and halves it because an
    afterpulse hits the wrong detector half of the time. The series runs to
    ceil(1/p_det) gates and stops early once a term drops below 1e-15.

    Without dead time the first term is p_after(0), the avalanche's own gate.
    The default profile is fitted to the no-dead-time anchor with that term
    included, so it is kept; the gated detector never sees a zero delay and
    simulated_sift_probability starts at the next gate.
    """
    if p_det <= 0 or p_det > 1:
        raise ValueError(f"p_det must lie in (0, 1], got {p_det}")
    if nu_hz <= 0 or dead_time_s < 0:
        raise ValueError("nu_hz must be positive and dead_time_s non-negative")
    if profile.amplitude == 0:
        return 0.0

    n_max = math.ceil(1.0 / p_det)
    # Last gate whose term is still above the floor
    floor_delay = profile.time_const_s * math.log(profile.amplitude / AFTERPULSE_TERM_FLOOR)
    n_floor = math.floor((floor_delay - dead_time_s) * nu_hz)
    if n_floor < 0:
        return 0.0
    n = np.arange(min(n_max, n_floor) + 1)
    total = float(np.sum(profile.probability(dead_time_s + n / nu_hz)))
    return _clamp_qber(0.5 * total, "QBER_after")


def qber_total(opt: float, dark: float, after: float, stray: float) -> float:
    """Sum of the four contributions, clamped to [0, 0.5]."""
    for name, value in (("opt", opt), ("dark", dark), ("after", after), ("stray", stray)):
        if not 0.0 <= value <= QBER_CEILING:
            raise ValueError(f"QBER component {name}={value} outside [0, 0.5]")
    return _clamp_qber(opt + dark + after + stray, "QBER")


def detection_probability(params: SystemParams, mu: Optional[float] = None) -> float:
    """Per-gate detection probability mu t_AB t_B eta_B."""
    mu = params.mu if mu is None else mu
    return mu * transmission_from_loss(params.fiber.loss_db) * params.t_bob * params.eta_bob


def raw_rate(params: SystemParams, p_det: float, mu: Optional[float] = None) -> RateReport:
    """
    Raw key rate q nu mu t_AB t_B eta_B eta_duty eta_tau.

    Args:
        params: System parameters
        p_det: Per-gate detection probability driving the dead-time factor
        mu: Optional override of params.mu (0 allowed)

    Returns:
        Partial RateReport with rates and efficiency factors
    """
    mu = params.mu if mu is None else mu
    if mu < 0:
        raise ValueError("mu must be non-negative")
    t_ab = transmission_from_loss(params.fiber.loss_db)
    prefactor = params.q * params.nu_hz * params.t_bob * params.eta_bob
    duty = eta_duty(params.storage_len_km, params.fiber.length_km)
    tau_factor = eta_tau(params.nu_hz, p_det, params.dead_time_s)
    r_raw = prefactor * mu * t_ab * duty * tau_factor
    return RateReport(
        p_det=p_det,
        r_raw_hz=r_raw,
        prefactor_hz=prefactor,
        eta_tau=tau_factor,
        eta_duty=duty,
    )


def _xlog2x(x: float) -> float:
    return 0.0 if x == 0 else x * math.log2(x)


def info_ab(D: float) -> Tuple[float, float]:
    """
    Mutual information of Alice and Bob before and after error correction.

    Returns:
        (1 - h(D), 1 + D log2 D - 7/2 D)
    """
    if not 0.0 <= D <= QBER_CEILING:
        raise ValueError(f"Disturbance must lie in [0, 0.5], got {D}")
    i_ab = 1.0 + _xlog2x(D) + _xlog2x(1.0 - D)
    i_ab_corrected = 1.0 + _xlog2x(D) - 3.5 * D
    return max(i_ab, 0.0), i_ab_corrected


def eve_base_info(attributed_qber: float = 0.01) -> float:
    """Information (2 / ln 2) * QBER for errors attributed to Eve."""
    if attributed_qber < 0:
        raise ValueError("Attributed QBER must be non-negative")
    return 2.0 / math.log(2.0) * attributed_qber


def i2nu(loss_db: float, eve: EveModel) -> float:
    """Multi-photon information, piecewise linear in dB, clamped to [0, 1]."""
    losses = [a[0] for a in eve.i2nu_anchors]
    infos = [a[1] for a in eve.i2nu_anchors]
    if loss_db < losses[0]:
        slope = (infos[1] - infos[0]) / (losses[1] - losses[0])
        value = infos[0] + slope * (loss_db - losses[0])
    elif loss_db > losses[-1]:
        slope = (infos[-1] - infos[-2]) / (losses[-1] - losses[-2])
        value = infos[-1] + slope * (loss_db - losses[-1])
    else:
        value = float(np.interp(loss_db, losses, infos))
    return min(max(value, 0.0), 1.0)


def eve_info(loss_db: float, mu: float, eve: Optional[EveModel] = None) -> float:
    """I_AE = base_info + I_2nu(loss), valid only for the mu the anchors were built for."""
    eve = eve or EveModel()
    if eve.anchor_mu is not None and not math.isclose(mu, eve.anchor_mu, rel_tol=1e-9):
        raise ValueError(
            f"EveModel anchors were computed for mu={eve.anchor_mu}; "
            f"supply explicit anchors for mu={mu}"
        )
    return min(eve.base_info + i2nu(loss_db, eve), 1.0)


def _check_net_inputs(D: float, i_ae: float):
    if not 0.0 <= D <= QBER_CEILING:
        raise ValueError(f"Disturbance must lie in [0, 0.5], got {D}")
    if not 0.0 <= i_ae <= 1.0:
        raise ValueError(f"i_ae must lie in [0, 1], got {i_ae}")


def distillation_factor(D: float, i_ae: float) -> float:
    """eta_dist = (I_AB - I_AE) * I'_AB / I_AB, clamped to >= 0."""
    _check_net_inputs(D, i_ae)
    i_ab, i_ab_corrected = info_ab(D)
    if i_ae >= i_ab:
        return 0.0
    return max((i_ab - i_ae) * i_ab_corrected / i_ab, 0.0)


def net_rate(r_raw_hz: float, D: float, i_ae: float) -> float:
    """Secret key rate after error correction and privacy amplification."""
    return distillation_factor(D, i_ae) * r_raw_hz


def net_rate_expanded(r_raw_hz: float, D: float, i_ae: float) -> float:
    """
    The single-line expansion of the net rate as printed alongside the composed form.

    It does not equal the composed form algebraically; kept for comparison.
    """
    _check_net_inputs(D, i_ae)
    bracket = (
        1.0 + _xlog2x(D) - 3.5 * D
        - i_ae * (1.0 - _xlog2x(1.0 - D) - 3.5 * D)
    )
    return max(bracket, 0.0) * r_raw_hz


def visibility_stats(r_right: float, r_wrong: float) -> Tuple[float, float]:
    """Fringe visibility and the implied QBER_opt from dark-subtracted rates."""
    total = r_right + r_wrong
    if total <= 0:
        raise ValueError("Zero total count rate, visibility undefined")
    visibility = (r_right - r_wrong) / total
    return visibility, (1.0 - visibility) / 2.0


def thermal_path_shift(alpha: float, link_len_km: float, drift_rate_k_per_h: float,
                       pulse_separation_s: float) -> float:
    """Extra path seen by the second pulse under a linear temperature drift, in metres."""
    if min(alpha, link_len_km, drift_rate_k_per_h, pulse_separation_s) < 0:
        raise ValueError("thermal_path_shift inputs must be non-negative")
    theta_k_per_s = drift_rate_k_per_h / 3600.0
    return alpha * 2.0 * link_len_km * 1e3 * theta_k_per_s * pulse_separation_s


def _route_pairs(visibility: float) -> List[Tuple[float, float]]:
    # Equiprobable classes: compatible bit 0, compatible bit 1, two incompatible
    p_right = (1.0 + visibility) / 2.0
    return [(p_right, 1 - p_right), (1 - p_right, p_right), (0.5, 0.5), (0.5, 0.5)]


def photon_click_probability(x: float, visibility: float) -> float:
    """
    Per-gate probability of a photon-triggered click, summed over both detectors.

    With x = mu t_AB t_B eta_B the detected photon numbers at the two detectors
    are independent Poisson variables; the result is averaged over the four
    equiprobable setting classes and tends to x in the small-signal regime.
    """
    if x < 0 or not 0.0 <= visibility <= 1.0:
        raise ValueError("x must be non-negative and visibility in [0, 1]")
    total = 0.0
    for p1, p2 in _route_pairs(visibility):
        total += (1 - math.exp(-x * p1)) + (1 - math.exp(-x * p2))
    return total / 4.0


def coincidence_probability(x: float, visibility: float, p_dark: float) -> float:
    """Honest per-gate probability that both detectors click."""
    if x < 0 or not 0.0 <= visibility <= 1.0 or p_dark < 0:
        raise ValueError("Invalid coincidence model inputs")
    total = 0.0
    for p1, p2 in _route_pairs(visibility):
        c1 = 1 - (1 - p_dark) * math.exp(-x * p1)
        c2 = 1 - (1 - p_dark) * math.exp(-x * p2)
        total += c1 * c2
    return total / 4.0


def simulated_sift_probability(params: SystemParams, detector: DetectorSpec,
                               train_size: int) -> float:
    """
    Sifted bits per applied gate that the gated-detector simulation produces.

    raw_rate counts photon detections only, with one dead time shared by both
    detectors. The simulation counts every single click: dark counts and
    afterpulses (including their cascades) as well, with the dead time kept
    per detector. Dead time and afterpulse tails are cut off at the end of a
    train of train_size gates.
    """
    if train_size < 1:
        raise ValueError("train_size must be positive")
    x = detection_probability(params)
    nu = params.nu_hz
    p_photon = photon_click_probability(x, params.visibility) / 2.0
    primary = 1.0 - (1.0 - p_photon) * (1.0 - detector.p_dark)

    # First live gate after a click; gates at exactly tau are live
    first_live = max(1, math.ceil(params.dead_time_s * nu - 1e-9))
    position = np.arange(train_size)
    dead_gates = float(np.minimum(first_live - 1, train_size - 1 - position).mean())
    n = np.arange(train_size)
    hazard = detector.afterpulse.probability((first_live + n) / nu)
    room = np.clip(train_size - position - first_live, 0, train_size)

    rate = primary
    for _ in range(4):
        live = np.clip(1.0 - rate * np.minimum(n, first_live - 1), 0.0, 1.0)
        tail = np.concatenate([[0.0], np.cumsum(hazard * live)])
        per_click = float(tail[room].mean())
        rate = primary / (1.0 - min(per_click, 0.5))

    live_fraction = 1.0 / (1.0 + rate * dead_gates)
    both = coincidence_probability(x, params.visibility, detector.p_dark) * live_fraction ** 2
    singles = 2.0 * rate * live_fraction - 2.0 * both
    return 0.5 * max(singles, 0.0)


def predict(params: SystemParams, detector: Optional[DetectorSpec] = None,
            eve: Optional[EveModel] = None) -> RateReport:
    """
    Full analytic report for one link configuration.

    Args:
        params: System parameters (fibre, source, Bob)
        detector: Detector noise model (defaults if None)
        eve: Eavesdropper model (defaults if None)

    Returns:
        RateReport with every field populated
    """
    detector = detector or DetectorSpec()
    eve = eve or EveModel()

    p_det = detection_probability(params)
    partial = raw_rate(params, p_det)

    opt = params.qber_opt
    dark = qber_dark(detector.p_dark, p_det)
    after = qber_after(detector.afterpulse, p_det, params.nu_hz, params.dead_time_s)
    stray = params.qber_stray
    raw_sum = opt + dark + after + stray
    total = qber_total(opt, dark, after, stray)

    i_ab, i_ab_corrected = info_ab(total)
    i_ae = eve_info(params.fiber.loss_db, params.mu, eve)
    dist = distillation_factor(total, i_ae)

    report = RateReport(**dict(
        partial.model_dump(),
        qber_opt=opt,
        qber_dark=dark,
        qber_after=after,
        qber_stray=stray,
        qber_total=total,
        qber_clamped=raw_sum > QBER_CEILING,
        i_ab=i_ab,
        i_ab_corrected=i_ab_corrected,
        i_ae=i_ae,
        eta_dist=dist,
        visibility=params.visibility,
        r_net_hz=dist * partial.r_raw_hz,
    ))
    logger.debug(
        f"predict: L={params.fiber.length_km} km, loss={params.fiber.loss_db:.2f} dB, "
        f"R_raw={report.r_raw_hz:.1f} Hz, QBER={total:.4f}, R_net={report.r_net_hz:.1f} Hz"
    )
    return report


def optimal_dead_time(params: SystemParams, detector: Optional[DetectorSpec] = None,
                      eve: Optional[EveModel] = None,
                      grid: Optional[Iterable[float]] = None) -> Tuple[float, RateReport]:
    """
    Dead time maximising the predicted net rate.

    Args:
        grid: Candidate dead times in seconds (default 0..12 us in 0.25 us steps)

    Returns:
        (best dead time, its RateReport)
    """
    if grid is None:
        grid = np.linspace(0.0, config.MAX_DEAD_TIME_S, 49)
    best = None
    for tau in grid:
        report = predict(params.with_changes(dead_time_s=float(tau)), detector, eve)
        if best is None or report.r_net_hz > best[1].r_net_hz:
            best = (float(tau), report)
    if best is None:
        raise ValueError("Empty dead-time grid")
    return best


def sweep_lengths(params: SystemParams, lengths_km: Sequence[float],
                  detector: Optional[DetectorSpec] = None,
                  eve: Optional[EveModel] = None) -> List[RateReport]:
    """Predicted reports for the same system over different link lengths."""
    return [
        predict(params.with_changes(fiber={"length_km": float(length)}), detector, eve)
        for length in lengths_km
    ]


def calibrate_afterpulse_profile(qber_no_dead: float = 0.04, qber_with_dead: float = 0.015,
                                 dead_time_s: float = 4e-6, p_det: float = 0.0015,
                                 nu_hz: float = 5e6) -> AfterpulseProfile:
    """
    Solve (amplitude, time constant) from two measured QBER_after anchors.

    The ratio of the two anchors fixes the time constant (found with brentq);
    the amplitude then follows linearly from the anchor without dead time.
    """
    if not 0 < qber_with_dead < qber_no_dead:
        raise ValueError("Dead time must reduce QBER_after")

    gates = np.arange(math.ceil(1.0 / p_det) + 1) / nu_hz

    def unit_sum(time_const_s: float, tau: float) -> float:
        return float(np.sum(np.exp(-(tau + gates) / time_const_s)))

    target = qber_with_dead / qber_no_dead

    def ratio_gap(time_const_s: float) -> float:
        return unit_sum(time_const_s, dead_time_s) / unit_sum(time_const_s, 0.0) - target

    time_const = brentq(ratio_gap, 1e-9, 1e-3, xtol=1e-16, rtol=1e-12)
    amplitude = 2.0 * qber_no_dead / unit_sum(time_const, 0.0)
    logger.info(f"Afterpulse profile solved: A={amplitude:.6e}, t_c={time_const:.6e} s")
    return AfterpulseProfile(amplitude=amplitude, time_const_s=time_const)
