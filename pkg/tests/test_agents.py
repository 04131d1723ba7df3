"""Tests for the networked session: state machines, transcripts and transports."""

import asyncio
from collections import deque

import numpy as np

from agents.alice_agent import AliceAgent
from agents.base_agent import SessionPhase
from agents.bob_agent import BobAgent
from agents.transport import run_memory_session, run_tcp_session
from agents.wire import (
    ClassicalMessage,
    MessageType,
    decode,
    encode,
    parse_sample_bits,
    qber_report_payload,
    sample_bits_payload,
)
from models.scenario import load_scenario
from orchestrator import run_exchange
from tools.stations import combine_keys
from utils import pack_bits

BOB_SENDS = {
    MessageType.HELLO,
    MessageType.CLICK_REPORT,
    MessageType.BASIS_REVEAL,
    MessageType.SAMPLE_BITS,
    MessageType.ABORT,
}


def small_run(n_pulses=20_000):
    return load_scenario("geneva_nyon_lake").run.with_changes(n_pulses_total=n_pulses)


def relay(alice: AliceAgent, bob: BobAgent, tamper=None):
    """Deliver frames one at a time until both sides stop talking."""
    alice.start()
    _, outgoing = bob.start()
    queue = deque((alice, msg) for msg in outgoing)
    while queue:
        receiver, msg = queue.popleft()
        msg = decode(encode(msg))
        if tamper is not None:
            msg = tamper(msg)
        _, outgoing = receiver.step(msg)
        peer = bob if receiver is alice else alice
        queue.extend((peer, reply) for reply in outgoing)


def run_relay(run=None, tamper=None):
    alice, bob = AliceAgent(run or small_run()), BobAgent()
    relay(alice, bob, tamper)
    return alice, bob


class TestSession:
    def test_both_sides_finish(self):
        alice, bob = run_relay()
        assert alice.phase is SessionPhase.DONE
        assert bob.phase is SessionPhase.DONE

    def test_transcripts_agree(self):
        alice, bob = run_relay()
        assert alice.state.transcript_digest == bob.state.transcript_digest
        assert alice.state.frames == bob.state.frames

    def test_keys_match_single_process(self):
        run = small_run()
        alice, bob = run_relay(run)
        networked = combine_keys(alice.final_key(), bob.final_key())
        assert networked.equals(run_exchange(run).key)

    def test_bob_never_sends_key_bits(self):
        alice, bob = run_relay()
        sent = [decode(frame) for frame in bob.sent_frames]
        assert {msg.type for msg in sent} <= BOB_SENDS
        samples = [msg for msg in sent if msg.type is MessageType.SAMPLE_BITS]
        assert len(samples) == 1
        assert len(parse_sample_bits(samples[0].payload)) == len(alice.sample_positions)

    def test_session_id_chosen_by_bob(self):
        alice, bob = run_relay()
        assert alice.state.session_id == bob.state.session_id


class TestProtocolViolations:
    def test_message_in_wrong_phase(self):
        alice = AliceAgent(small_run())
        alice.start()
        stray = ClassicalMessage(MessageType.SAMPLE_BITS, bytes(8), sample_bits_payload([0, 1]))
        state, outgoing = alice.step(stray)
        assert state.phase is SessionPhase.ABORTED
        assert [msg.type for msg in outgoing] == [MessageType.ABORT]

    def test_peer_abort(self):
        bob = BobAgent()
        bob.start()
        state, outgoing = bob.step(ClassicalMessage(MessageType.ABORT, bob.state.session_id, b"stop"))
        assert state.phase is SessionPhase.ABORTED
        assert "stop" in state.reason
        assert outgoing == []

    def test_garbled_payload_aborts(self):
        def garble(msg):
            if msg.type is MessageType.CLICK_REPORT:
                return ClassicalMessage(msg.type, msg.session_id, b"\xff")
            return msg

        alice, bob = run_relay(tamper=garble)
        assert alice.phase is SessionPhase.ABORTED
        assert bob.phase is SessionPhase.ABORTED


class TestTampering:
    def test_flipped_sample_aborts_both(self):
        def flip(msg):
            if msg.type is MessageType.SAMPLE_BITS:
                bits = parse_sample_bits(msg.payload)
                return ClassicalMessage(msg.type, msg.session_id, sample_bits_payload(1 - bits))
            return msg

        alice, bob = run_relay(tamper=flip)
        assert alice.phase is SessionPhase.ABORTED
        assert bob.phase is SessionPhase.ABORTED
        assert alice.final_key() is None
        assert bob.final_key() is None

    def test_forged_qber_report_aborts_bob(self):
        def forge(msg):
            if msg.type is MessageType.QBER_REPORT:
                return ClassicalMessage(msg.type, msg.session_id, qber_report_payload(0.2, 0.01, 100))
            return msg

        alice, bob = run_relay(tamper=forge)
        assert bob.phase is SessionPhase.ABORTED
        assert bob.final_key() is None

    def test_trojan_light_raises_alert(self):
        alice, bob = run_relay(small_run().with_changes(trojan_power=0.5))
        assert alice.phase is SessionPhase.ABORTED
        assert bob.phase is SessionPhase.ABORTED
        assert alice.security.alert
        assert "Alice raised" in bob.state.reason


class TestTransports:
    def test_memory_session(self):
        run = small_run()
        alice, bob = asyncio.run(run_memory_session(run))
        assert alice.phase is bob.phase is SessionPhase.DONE
        assert alice.state.transcript_digest == bob.state.transcript_digest

    def test_tcp_session_same_key(self):
        run = small_run()
        alice, bob = asyncio.run(run_tcp_session(run))
        assert alice.phase is bob.phase is SessionPhase.DONE
        key = combine_keys(alice.final_key(), bob.final_key())
        assert key.equals(run_exchange(run).key)
        assert np.all(key.indices >= 0)

    def test_final_key_never_on_the_wire(self):
        alice, bob = asyncio.run(run_memory_session(small_run(1_000_000)))
        assert alice.phase is bob.phase is SessionPhase.DONE
        frames = alice.sent_frames + bob.sent_frames
        stream = b"".join(frames)
        for side in (alice, bob):
            _, bits = side.final_key().arrays()
            assert len(bits) >= 1000
            packed = pack_bits(bits)
            assert not any(packed in frame for frame in frames)
            assert packed not in stream
