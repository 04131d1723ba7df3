"""Bob's session endpoint: hosts source, channel and detectors."""

from typing import List, Optional

import numpy as np

from agents.base_agent import BaseLinkAgent, Role, SessionPhase, new_session_id
from agents.wire import (
    ClassicalMessage,
    MessageType,
    bits_payload,
    click_report_payload,
    parse_bits,
    parse_qber_report,
    parse_sample_request,
    parse_simq,
    parse_text,
    parse_train,
    sample_bits_payload,
)
from errors import ProtocolError
from models.scenario import RunConfig
from orchestrator import calibrate_for_run, plan_schedule
from tools.calibration import LineCalibration
from tools.stations import BobStation, KeyBuffer
from utils import make_streams

M = MessageType
P = SessionPhase


class BobAgent(BaseLinkAgent):
    """Opens the session, runs the trains Alice modulates and answers her requests."""

    LEGAL = {
        P.INIT: frozenset({M.PARAMS}),
        P.CONFIGURED: frozenset({M.SIMQ}),
        P.EXCHANGING: frozenset({M.SIMQ, M.TRAIN_DONE, M.SECURITY_ALERT}),
        P.SIFTING: frozenset({M.SIFT_RESULT}),
        P.ESTIMATING: frozenset({M.SAMPLE_REQUEST, M.QBER_REPORT, M.BYE}),
    }

    def __init__(self, session_id: Optional[bytes] = None):
        super().__init__(Role.BOB, session_id or new_session_id())
        self.run: Optional[RunConfig] = None
        self.station: Optional[BobStation] = None
        self.calibration: Optional[LineCalibration] = None
        self.d_hat: Optional[float] = None
        self.sample_positions: Optional[np.ndarray] = None
        self._next_train = 0

    def _on_start(self) -> List[ClassicalMessage]:
        self.logger.info(f"Opening session {self.state.session_id.hex()}")
        return [self.message(M.HELLO)]

    def _handle(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        handler = {
            M.PARAMS: self._on_params,
            M.SIMQ: self._on_simq,
            M.SIFT_RESULT: self._on_sift_result,
            M.TRAIN_DONE: self._on_train_done,
            M.SECURITY_ALERT: self._on_security_alert,
            M.SAMPLE_REQUEST: self._on_sample_request,
            M.QBER_REPORT: self._on_qber_report,
            M.BYE: self._on_bye,
        }[msg.type]
        return handler(msg)

    def _on_params(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        self.run = RunConfig.model_validate_json(msg.payload)
        streams = make_streams(self.run.seed)
        self.calibration = calibrate_for_run(self.run, streams["calibration"])
        schedule = plan_schedule(self.run, self.calibration.gate_offset_s)
        self.station = BobStation(self.run.params, self.run.detector, schedule, streams)
        self.transition(P.CONFIGURED)
        return []

    def _on_simq(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        train, quarters = parse_simq(msg.payload)
        schedule = self.station.schedule
        if train != self._next_train:
            raise ProtocolError(f"train {train} out of order, expected {self._next_train}")
        if len(quarters) != schedule.pulses_in_train(train, self.run.n_pulses_total):
            raise ProtocolError(f"train {train} has the wrong number of pulses")
        if self.phase is P.CONFIGURED:
            self.transition(P.EXCHANGING)
        detection = self.station.detect(train, quarters)
        self.transition(P.SIFTING)
        return [
            self.message(M.CLICK_REPORT, click_report_payload(
                train, train * schedule.train_size, detection.single_pulses, detection.coincidences
            )),
            self.message(M.BASIS_REVEAL, bits_payload(train, self.station.reveal_bases())),
        ]

    def _on_sift_result(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        train, keep = parse_bits(msg.payload)
        if train != self._next_train:
            raise ProtocolError(f"sift result for train {train}, expected {self._next_train}")
        self.station.accept(keep.astype(bool))
        self._next_train += 1
        self.transition(P.EXCHANGING)
        return []

    def _on_train_done(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        last = parse_train(msg.payload)
        if last != self._next_train - 1:
            raise ProtocolError(f"exchange ended at train {last}, Bob saw {self._next_train} trains")
        self.transition(P.ESTIMATING)
        return []

    def _on_security_alert(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        return self.abort(f"Alice raised: {parse_text(msg.payload)}", notify=False)

    def _on_sample_request(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        if self.sample_positions is not None:
            raise ProtocolError("second SAMPLE_REQUEST")
        key_length, positions = parse_sample_request(msg.payload)
        if key_length != len(self.station.key):
            raise ProtocolError(f"Alice holds {key_length} sifted bits, Bob {len(self.station.key)}")
        self.sample_positions = positions
        _, bits = self.station.key.arrays()
        return [self.message(M.SAMPLE_BITS, sample_bits_payload(bits[positions]))]

    def _on_qber_report(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        if self.sample_positions is None:
            raise ProtocolError("QBER_REPORT before SAMPLE_REQUEST")
        self.d_hat, _, _ = parse_qber_report(msg.payload)
        if self.d_hat > self.run.qber_abort_threshold:
            return self.abort(f"qber {self.d_hat:.4f} above {self.run.qber_abort_threshold:.2f}",
                              notify=False)
        return []

    def _on_bye(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        if self.d_hat is None:
            raise ProtocolError("BYE before QBER_REPORT")
        self.transition(P.DONE)
        self.logger.info(f"Session done, QBER {self.d_hat:.4f}")
        return []

    def final_key(self) -> Optional[KeyBuffer]:
        """Bob's bits left after the sample was disclosed; None unless Done."""
        if self.phase is not P.DONE:
            return None
        indices, bits = self.station.key.arrays()
        keep = np.ones(len(indices), dtype=bool)
        keep[self.sample_positions] = False
        remaining = KeyBuffer()
        remaining.append(indices[keep], bits[keep])
        return remaining
