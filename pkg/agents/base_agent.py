"""Base session agent for the classical channel."""

import hashlib
import logging
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, FrozenSet, List, Optional, Tuple

from errors import ProtocolError, QKDSimError
from agents.wire import ClassicalMessage, MessageType, encode, text_payload

logger = logging.getLogger("qkdsim")


class Role(str, Enum):
    ALICE = "alice"
    BOB = "bob"


class SessionPhase(str, Enum):
    INIT = "Init"
    CONFIGURED = "Configured"
    EXCHANGING = "Exchanging"
    SIFTING = "Sifting"
    ESTIMATING = "Estimating"
    DONE = "Done"
    ABORTED = "Aborted"


# Fixed order; any phase may also go to ABORTED
TRANSITIONS: Dict[SessionPhase, FrozenSet[SessionPhase]] = {
    SessionPhase.INIT: frozenset({SessionPhase.CONFIGURED}),
    SessionPhase.CONFIGURED: frozenset({SessionPhase.EXCHANGING}),
    SessionPhase.EXCHANGING: frozenset({SessionPhase.SIFTING, SessionPhase.ESTIMATING}),
    SessionPhase.SIFTING: frozenset({SessionPhase.EXCHANGING, SessionPhase.ESTIMATING}),
    SessionPhase.ESTIMATING: frozenset({SessionPhase.DONE}),
    SessionPhase.DONE: frozenset(),
    SessionPhase.ABORTED: frozenset(),
}

FINAL_PHASES = frozenset({SessionPhase.DONE, SessionPhase.ABORTED})


@dataclass
class SessionState:
    role: Role
    session_id: bytes
    phase: SessionPhase = SessionPhase.INIT
    reason: Optional[str] = None
    transcript: Any = field(default_factory=hashlib.sha256, repr=False)
    frames: int = 0

    @property
    def transcript_digest(self) -> str:
        return self.transcript.hexdigest()

    @property
    def aborted(self) -> bool:
        return self.phase is SessionPhase.ABORTED

    @property
    def finished(self) -> bool:
        return self.phase in FINAL_PHASES


def new_session_id() -> bytes:
    return os.urandom(8)


class BaseLinkAgent(ABC):
    """
    One endpoint of a session.

    ``start`` handles the local start event and ``step`` one incoming message;
    both return the state with the messages to send. Every frame sent or
    received is folded into the transcript hash in processing order.
    """

    # Message types accepted in each phase
    LEGAL: Dict[SessionPhase, FrozenSet[MessageType]] = {}

    def __init__(self, role: Role, session_id: Optional[bytes] = None):
        self.state = SessionState(role=role, session_id=session_id or bytes(8))
        self.logger = logging.getLogger(f"qkdsim.{role.value}")
        self.sent_frames: List[bytes] = []

    @property
    def phase(self) -> SessionPhase:
        return self.state.phase

    def transition(self, phase: SessionPhase):
        if phase is not SessionPhase.ABORTED and phase not in TRANSITIONS[self.state.phase]:
            raise ProtocolError(f"illegal transition {self.state.phase.value} -> {phase.value}")
        self.logger.debug(f"{self.state.phase.value} -> {phase.value}")
        self.state.phase = phase

    def message(self, msg_type: MessageType, payload: bytes = b"") -> ClassicalMessage:
        return ClassicalMessage(msg_type, self.state.session_id, payload)

    def _record(self, frame: bytes):
        self.state.transcript.update(frame)
        self.state.frames += 1

    def abort(self, reason: str, notify: bool = True) -> List[ClassicalMessage]:
        """Move to Aborted; optionally tell the peer."""
        self.logger.warning(f"Session aborted: {reason}")
        self.state.reason = reason
        self.transition(SessionPhase.ABORTED)
        return [self.message(MessageType.ABORT, text_payload(reason))] if notify else []

    def _emit(self, messages: List[ClassicalMessage]) -> List[ClassicalMessage]:
        for msg in messages:
            frame = encode(msg)
            self._record(frame)
            self.sent_frames.append(frame)
        return messages

    def start(self) -> Tuple[SessionState, List[ClassicalMessage]]:
        """Local start event."""
        return self.state, self._emit(self._on_start())

    def step(self, msg: ClassicalMessage) -> Tuple[SessionState, List[ClassicalMessage]]:
        """
        Process one incoming message.

        Returns:
            (state, outgoing messages); protocol violations abort the session
            and answer with ABORT instead of raising
        """
        self._record(encode(msg))
        if self.state.finished:
            return self.state, []
        if msg.type is MessageType.ABORT:
            self.state.reason = f"peer aborted: {msg.payload.decode('utf-8', 'replace')}"
            self.logger.warning(self.state.reason)
            self.transition(SessionPhase.ABORTED)
            return self.state, []
        if self.state.phase is not SessionPhase.INIT and msg.session_id != self.state.session_id:
            return self.state, self._emit(self.abort("session id mismatch"))
        try:
            if msg.type not in self.LEGAL.get(self.state.phase, frozenset()):
                raise ProtocolError(f"{msg.type.name} is not legal in phase {self.state.phase.value}")
            outgoing = self._handle(msg)
        except (QKDSimError, ValueError) as e:
            return self.state, self._emit(self.abort(str(e)))
        return self.state, self._emit(outgoing)

    @abstractmethod
    def _on_start(self) -> List[ClassicalMessage]:
        """Messages sent when the session starts."""
        pass

    @abstractmethod
    def _handle(self, msg: ClassicalMessage) -> List[ClassicalMessage]:
        """Type-specific handling of a legal message."""
        pass
