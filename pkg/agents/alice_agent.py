"""Alice's session endpoint: modulator settings, sifting, sampling and monitors."""

from typing import List, Optional

import numpy as np

from agents.base_agent import BaseLinkAgent, Role, SessionPhase
from agents.wire import (
    ClassicalMessage,
    MessageType,
    bits_payload,
    parse_bits,
    parse_click_report,
    parse_sample_bits,
    qber_report_payload,
    sample_request_payload,
    simq_payload,
    text_payload,
    train_payload,
)
from errors import ProtocolError
from models.frames import SiftedKey
from models.reports import SecurityReport
from models.scenario import RunConfig
from orchestrator import POWER_CALIBRATION_SAMPLES, expected_coincidence_rate, plan_schedule
from tools.protocol import (
    QberEstimate,
    calibrate_power_bounds,
    choose_sample_positions,
    qber_from_sample,
    security_check,
)
from tools.stations import AliceStation, KeyBuffer, combine_keys
from utils import make_streams

M = MessageType
P = SessionPhase


class AliceAgent(BaseLinkAgent):
    """Listens for Bob, drives the train loop and decides whether to keep the key."""

    LEGAL = {
        P.INIT: frozenset({M.HELLO}),
        P.EXCHANGING: frozenset({M.CLICK_REPORT}),
        P.SIFTING: frozenset({M.BASIS_REVEAL}),
        P.ESTIMATING: frozenset({M.SAMPLE_BITS}),
    }

    def __init__(self, run: RunConfig):
        super().__init__(Role.ALICE)
        self.run = run
        self.schedule = plan_schedule(run)
        self.streams = make_streams(run.seed)
        self.station: Optional[AliceStation] = None
        self.power_bounds = None
        self.security: Optional[SecurityReport] = None
        self.trains_run = 0
        self.gates = 0
        self.coincidences = 0
        self.d_hat: Optional[float] = None
        self.ci_2sigma: Optional[float] = None
        self.sample_positions: Optional[np.ndarray] = None
        self._train = -1
        self._reported: Optional[np.ndarray] = None

    def _on_start(self) -> List[ClassicalMessage]:
        return []

    def _handle(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        handler = {
            M.HELLO: self._on_hello,
            M.CLICK_REPORT: self._on_click_report,
            M.BASIS_REVEAL: self._on_basis_reveal,
            M.SAMPLE_BITS: self._on_sample_bits,
        }[msg.type]
        return handler(msg)

    def _send_train(self, train: int) -> ClassicalMessage:
        self._train = train
        quarters = self.station.prepare(train)
        return self.message(M.SIMQ, simq_payload(train, quarters))

    def _on_hello(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        self.state.session_id = msg.session_id
        self.logger.info(f"Session {msg.session_id.hex()} opened by Bob")
        self.station = AliceStation(self.schedule, self.run.n_pulses_total, self.streams,
                                    self.run.trojan_power)
        self.power_bounds = calibrate_power_bounds(
            self.station.calibrate_power(POWER_CALIBRATION_SAMPLES)
        )
        self.transition(P.CONFIGURED)
        out = [self.message(M.PARAMS, self.run.model_dump_json().encode("utf-8"))]
        self.transition(P.EXCHANGING)
        out.append(self._send_train(0))
        return out

    def _on_click_report(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        train, pulses, coincidences = parse_click_report(msg.payload)
        if train != self._train:
            raise ProtocolError(f"click report for train {train}, expected {self._train}")
        self._reported = pulses
        self.coincidences += coincidences
        self.transition(P.SIFTING)
        return []

    def _security_report(self) -> SecurityReport:
        return security_check(
            self.coincidences, expected_coincidence_rate(self.run), self.gates,
            self.station.power_readings, self.power_bounds,
        )

    def _alert(self, out: List[ClassicalMessage]) -> List[ClassicalMessage]:
        reason = "security: " + "; ".join(self.security.reasons)
        out.append(self.message(M.SECURITY_ALERT, text_payload(reason)))
        self.abort(reason, notify=False)
        return out

    def _on_basis_reveal(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        train, bases = parse_bits(msg.payload)
        if train != self._train or len(bases) != len(self._reported):
            raise ProtocolError("basis reveal does not match the click report")
        keep = self.station.sift(self._reported, bases)
        self.trains_run += 1
        self.gates += self.schedule.pulses_in_train(train, self.run.n_pulses_total)
        out = [self.message(M.SIFT_RESULT, bits_payload(train, keep.astype(np.uint8)))]

        if self.station.power_alarm(self.power_bounds):
            self.logger.warning(f"Incoming power out of bounds in train {train}")
            self.security = self._security_report()
            return self._alert(out)

        if train + 1 < self.schedule.n_trains:
            self.transition(P.EXCHANGING)
            out.append(self._send_train(train + 1))
            return out

        self.security = self._security_report()
        if self.security.alert:
            return self._alert(out)
        self.transition(P.ESTIMATING)
        out.append(self.message(M.TRAIN_DONE, train_payload(train)))
        key_length = len(self.station.key)
        if key_length == 0:
            return out + self.abort("no sifted bits")
        self.sample_positions = choose_sample_positions(
            key_length, self.run.sample_fraction, self.streams["sampling"]
        )
        out.append(self.message(M.SAMPLE_REQUEST, sample_request_payload(key_length, self.sample_positions)))
        return out

    def _on_sample_bits(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        bob_bits = parse_sample_bits(msg.payload)
        if len(bob_bits) != len(self.sample_positions):
            raise ProtocolError("sample size mismatch")
        _, alice_bits = self.station.key.arrays()
        self.d_hat, self.ci_2sigma = qber_from_sample(alice_bits[self.sample_positions], bob_bits)
        out = [self.message(
            M.QBER_REPORT, qber_report_payload(self.d_hat, self.ci_2sigma, len(bob_bits))
        )]
        if self.d_hat > self.run.qber_abort_threshold:
            self.abort(f"qber {self.d_hat:.4f} above {self.run.qber_abort_threshold:.2f}", notify=False)
            return out
        self.transition(P.DONE)
        self.logger.info(f"Exchange done, QBER {self.d_hat:.4f} +- {self.ci_2sigma:.4f}")
        out.append(self.message(M.BYE))
        return out

    def final_key(self) -> Optional[KeyBuffer]:
        """Alice's bits left after the sample was disclosed; None unless Done."""
        if self.phase is not P.DONE:
            return None
        indices, bits = self.station.key.arrays()
        keep = np.ones(len(indices), dtype=bool)
        keep[self.sample_positions] = False
        remaining = KeyBuffer()
        remaining.append(indices[keep], bits[keep])
        return remaining

    def estimate_with(self, bob_key: KeyBuffer) -> Optional[QberEstimate]:
        """The QberEstimate a single process would have produced, given Bob's buffer."""
        if self.d_hat is None:
            return None
        key: SiftedKey = combine_keys(self.station.key, bob_key)
        return QberEstimate(
            d_hat=self.d_hat,
            ci_2sigma=self.ci_2sigma,
            sample_size=len(self.sample_positions),
            disclosed_indices=key.indices[self.sample_positions],
            key=key.without(self.sample_positions),
            clamped=self.d_hat > 0.5,
        )
