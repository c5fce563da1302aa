"""Deterministic discrete-event core.

A single :class:`Simulator` owns the integer-nanosecond clock, the event
heap, the named random streams and the trace.  Actors are generator
functions run as :class:`Process`; they ``yield`` either an ``int`` delay in
nanoseconds or an :class:`Event` to wait on, and receive the event's value
back from the ``yield``.
"""

from __future__ import annotations

import enum
import heapq
import json
import logging
import zlib
from typing import Any, Callable, Iterable

import numpy as np

from .units import MS

logger = logging.getLogger(__name__)

TRACE_SCHEMA = 1


class SimulationError(RuntimeError):
    pass


class Event:
    """One-shot event; callbacks run (via the queue) when it is triggered."""

    __slots__ = ("sim", "triggered", "value", "_callbacks")

    def __init__(self, sim: "Simulator"):
        self.sim = sim
        self.triggered = False
        self.value = None
        self._callbacks = []

    def succeed(self, value=None) -> "Event":
        if self.triggered:
            raise SimulationError("event triggered twice")
        self.triggered = True
        self.value = value
        for cb in self._callbacks:
            self.sim.schedule(self.sim.now, cb, value)
        self._callbacks = []
        return self

    def add_callback(self, fn: Callable[[Any], None]) -> None:
        if self.triggered:
            self.sim.schedule(self.sim.now, fn, self.value)
        else:
            self._callbacks.append(fn)


class Process(Event):
    """Runs a generator; triggered with its return value when it finishes."""

    __slots__ = ("_gen", "name")

    def __init__(self, sim: "Simulator", gen, name: str = ""):
        super().__init__(sim)
        self._gen = gen
        self.name = name
        sim.schedule(sim.now, self._resume, None)

    def _resume(self, value):
        try:
            target = self._gen.send(value)
        except StopIteration as stop:
            self.succeed(stop.value)
            return
        if isinstance(target, Event):
            target.add_callback(self._resume)
        elif isinstance(target, (int, np.integer)):
            if target < 0:
                raise SimulationError(f"process {self.name!r} yielded negative delay {target}")
            self.sim.schedule(self.sim.now + int(target), self._resume, None)
        else:
            raise SimulationError(f"process {self.name!r} yielded unsupported {target!r}")


class Simulator:
    def __init__(self, seed: int = 0, trace: bool = False, strict: bool = True):
        self.seed = int(seed)
        self.now = 0
        self.strict = strict
        self._queue = []
        self._seq = 0
        self._rngs = {}
        self.tracing = trace
        self.trace = []

    def schedule(self, at: int, fn: Callable, *args) -> None:
        at = int(at)
        if at < self.now:
            if self.strict:
                raise SimulationError(f"cannot schedule at {at} < now {self.now}")
            logger.warning("clamping event scheduled in the past (%d < %d)", at, self.now)
            at = self.now
        heapq.heappush(self._queue, (at, self._seq, fn, args))
        self._seq += 1

    def call_in(self, delay: int, fn: Callable, *args) -> None:
        self.schedule(self.now + int(delay), fn, *args)

    def event(self) -> Event:
        return Event(self)

    def process(self, gen, name: str = "") -> Process:
        return Process(self, gen, name)

    def run(self, until: int | None = None) -> None:
        """Execute events in (time, insertion) order.

        With ``until`` the clock ends at ``until`` even if the queue drains
        earlier; without it the loop stops at quiescence.
        """
        q = self._queue
        while q:
            if until is not None and q[0][0] > until:
                break
            at, _, fn, args = heapq.heappop(q)
            self.now = at
            fn(*args)
        if until is not None and until > self.now:
            self.now = int(until)

    @property
    def pending(self) -> int:
        return len(self._queue)

    def rng(self, name: str) -> np.random.Generator:
        """Independent stream per subsystem, derived from the root seed."""
        g = self._rngs.get(name)
        if g is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(name.encode()),))
            g = self._rngs[name] = np.random.Generator(np.random.PCG64(ss))
        return g

    def log(self, node, event: str, **data) -> None:
        if self.tracing:
            self.trace.append({"t": self.now, "node": None if node is None else str(getattr(node, "value", node)),
                               "event": event, "data": data})


def write_trace(path, records: Iterable[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({"schema": TRACE_SCHEMA, **rec}, sort_keys=True, default=_json_default))
            fh.write("\n")


def _json_default(o):
    if isinstance(o, enum.Enum):
        return o.value
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


class MsgType(enum.IntEnum):
    FORWARD_CREATE = 1
    ABORT = 2


def encode_message(kind: MsgType, payload: dict) -> bytes:
    """Frame: one type byte followed by a compact JSON payload."""
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_json_default)
    return bytes([int(kind)]) + body.encode()


def decode_message(frame: bytes):
    if not frame:
        raise ValueError("empty frame")
    return MsgType(frame[0]), json.loads(frame[1:].decode())


class ClassicalChannel:
    """Reliable-by-default, in-order, fixed-latency link between the two nodes."""

    def __init__(self, sim: Simulator, latency: int = MS // 10, loss: float = 0.0, name: str = "lan"):
        if latency < 0:
            raise ValueError("channel latency must be non-negative")
        if not 0 <= loss <= 1:
            raise ValueError("loss must be a probability")
        self.sim = sim
        self.latency = int(latency)
        self.loss = loss
        self.name = name
        self._handlers = {}
        self.sent = 0
        self.dropped = 0

    def connect(self, node, handler: Callable[[Any, bytes], None]) -> None:
        """Register ``handler(sender, frame)`` for frames addressed to ``node``."""
        self._handlers[str(getattr(node, "value", node))] = handler

    def send(self, sender, receiver, frame: bytes) -> None:
        self.sent += 1
        if self.loss > 0 and self.sim.rng(f"channel.{self.name}").random() < self.loss:
            self.dropped += 1
            self.sim.log(sender, "msg_dropped", size=len(frame))
            return
        handler = self._handlers[str(getattr(receiver, "value", receiver))]
        self.sim.call_in(self.latency, handler, sender, frame)
