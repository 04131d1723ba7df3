"""Session agents and the classical channel."""

from agents.base_agent import BaseLinkAgent, Role, SessionPhase, SessionState
from agents.alice_agent import AliceAgent
from agents.bob_agent import BobAgent
from agents.wire import ClassicalMessage, MessageType, decode, encode

__all__ = [
    "BaseLinkAgent",
    "Role",
    "SessionPhase",
    "SessionState",
    "AliceAgent",
    "BobAgent",
    "ClassicalMessage",
    "MessageType",
    "decode",
    "encode",
]
