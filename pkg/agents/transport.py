"""Byte-stream transports driving the session agents."""

import asyncio
import logging
from abc import ABC, abstractmethod
from typing import List, Optional, Tuple

import config
from agents.alice_agent import AliceAgent
from agents.base_agent import BaseLinkAgent, SessionPhase
from agents.bob_agent import BobAgent
from agents.wire import HEADER_SIZE, ClassicalMessage, decode, encode, frame_length
from errors import DecodeError, ProtocolError
from models.scenario import RunConfig

logger = logging.getLogger("qkdsim.transport")


class FrameChannel(ABC):
    """Reliable, ordered frame transport."""

    @abstractmethod
    async def send(self, messages: List[ClassicalMessage]):
        pass

    @abstractmethod
    async def recv(self) -> ClassicalMessage:
        pass

    async def close(self):
        pass


class StreamChannel(FrameChannel):
    """Frames over an asyncio stream pair (TCP)."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer

    async def send(self, messages: List[ClassicalMessage]):
        for msg in messages:
            self.writer.write(encode(msg))
        await self.writer.drain()

    async def recv(self) -> ClassicalMessage:
        try:
            header = await self.reader.readexactly(HEADER_SIZE)
            total = frame_length(header)
            payload = await self.reader.readexactly(total - HEADER_SIZE)
        except asyncio.IncompleteReadError as e:
            raise ProtocolError(f"peer closed the connection after {len(e.partial)} bytes") from e
        return decode(header + payload)

    async def close(self):
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionError, OSError):
            pass


class MemoryChannel(FrameChannel):
    """One end of an in-memory duplex pipe; frames still go through the codec."""

    def __init__(self, inbox: asyncio.Queue, outbox: asyncio.Queue):
        self.inbox = inbox
        self.outbox = outbox

    @classmethod
    def pair(cls) -> Tuple["MemoryChannel", "MemoryChannel"]:
        a_to_b: asyncio.Queue = asyncio.Queue()
        b_to_a: asyncio.Queue = asyncio.Queue()
        return cls(b_to_a, a_to_b), cls(a_to_b, b_to_a)

    async def send(self, messages: List[ClassicalMessage]):
        for msg in messages:
            await self.outbox.put(encode(msg))

    async def recv(self) -> ClassicalMessage:
        return decode(await self.inbox.get())


async def drive(agent: BaseLinkAgent, channel: FrameChannel,
                timeout: float = config.SESSION_TIMEOUT) -> BaseLinkAgent:
    """Run one endpoint until it reaches Done or Aborted."""
    _, outgoing = agent.start()
    await channel.send(outgoing)
    while not agent.state.finished:
        try:
            msg = await asyncio.wait_for(channel.recv(), timeout)
        except asyncio.TimeoutError:
            agent.abort(f"no message within {timeout:g} s", notify=False)
            break
        except (DecodeError, ProtocolError) as e:
            await channel.send(agent.abort(str(e)))
            break
        _, outgoing = agent.step(msg)
        await channel.send(outgoing)
    return agent


async def run_memory_session(run: RunConfig) -> Tuple[AliceAgent, BobAgent]:
    """Both endpoints in this process over an in-memory pipe."""
    alice, bob = AliceAgent(run), BobAgent()
    alice_end, bob_end = MemoryChannel.pair()
    await asyncio.gather(drive(alice, alice_end), drive(bob, bob_end))
    return alice, bob


async def serve_alice(run: RunConfig, host: str, port: int,
                      bound: Optional[asyncio.Future] = None) -> AliceAgent:
    """
    Listen for a single Bob and run the session.

    Args:
        run: Run configuration Alice imposes on the session
        host: Interface to bind
        port: Port to bind, 0 for an ephemeral one
        bound: Optional future receiving the bound port

    Returns:
        The finished AliceAgent
    """
    agent = AliceAgent(run)
    finished = asyncio.Event()

    async def handle(reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        if finished.is_set() or agent.phase is not SessionPhase.INIT:
            writer.close()
            return
        peer = writer.get_extra_info("peername")
        logger.info(f"Bob connected from {peer}")
        channel = StreamChannel(reader, writer)
        try:
            await drive(agent, channel)
        finally:
            await channel.close()
            finished.set()

    server = await asyncio.start_server(handle, host, port)
    actual_port = server.sockets[0].getsockname()[1]
    logger.info(f"Alice listening on {host}:{actual_port}")
    if bound is not None:
        bound.set_result(actual_port)
    async with server:
        await finished.wait()
    return agent


async def connect_bob(host: str, port: int, timeout: float = config.CONNECT_TIMEOUT) -> BobAgent:
    """Connect to Alice, retrying until she listens or the timeout expires."""
    loop = asyncio.get_running_loop()
    deadline = loop.time() + timeout
    while True:
        try:
            reader, writer = await asyncio.open_connection(host, port)
            break
        except OSError as e:
            if loop.time() >= deadline:
                raise ProtocolError(f"cannot reach Alice at {host}:{port}: {e}") from e
            await asyncio.sleep(0.1)
    channel = StreamChannel(reader, writer)
    agent = BobAgent()
    try:
        await drive(agent, channel)
    finally:
        await channel.close()
    return agent


async def run_tcp_session(run: RunConfig, host: str = "127.0.0.1",
                          port: int = 0) -> Tuple[AliceAgent, BobAgent]:
    """Both endpoints in this process over a local TCP connection."""
    bound = asyncio.get_running_loop().create_future()
    alice_task = asyncio.create_task(serve_alice(run, host, port, bound))
    actual_port = await bound
    bob = await connect_bob(host, actual_port)
    alice = await alice_task
    return alice, bob
