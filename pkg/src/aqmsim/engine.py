"""Discrete-event core: integer-nanosecond clock, event heap, seeded RNG streams."""

from __future__ import annotations

import hashlib
import random
from heapq import heappop, heappush
from typing import Any, Callable

NS_PER_S = 1_000_000_000


def to_ns(seconds: float) -> int:
    return int(round(seconds * NS_PER_S))


def to_s(ns: int) -> float:
    return ns / NS_PER_S


class SimulationError(RuntimeError):
    pass


class RngStream:
    """Deterministic uniform stream derived from ``(master_seed, label)``.

    The seed is a SHA-256 digest of both parts, so adding a new consumer
    never shifts the draws of an existing one.
    """

    def __init__(self, master_seed: int, label: str):
        self.master_seed = int(master_seed)
        self.label = label
        digest = hashlib.sha256(f"{self.master_seed}/{label}".encode()).digest()
        self._gen = random.Random(int.from_bytes(digest[:16], "big"))
        # bound methods: the hot paths call these directly
        self.random = self._gen.random
        self.uniform01 = self._gen.random
        self.randrange = self._gen.randrange

    def __repr__(self):
        return f"RngStream(seed={self.master_seed}, label={self.label!r})"


class EventHandle:
    __slots__ = ("seq", "time_ns", "fired", "cancelled")

    def __init__(self, seq: int, time_ns: int):
        self.seq = seq
        self.time_ns = time_ns
        self.fired = False
        self.cancelled = False

    @property
    def pending(self) -> bool:
        return not (self.fired or self.cancelled)


class Simulator:
    """Single-threaded event loop.

    ``at`` / ``after`` are the uncancellable hot paths used by the network
    models; ``schedule`` returns a handle that ``cancel`` accepts.
    Callbacks take exactly one positional argument.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.now = 0  # ns
        self._heap: list[tuple[int, int, Callable[[Any], None], Any]] = []
        self._seq = 0
        self._cancelled: set[int] = set()
        self.executed = 0
        self.cancelled_count = 0
        self.finished = False
        self._streams: dict[str, RngStream] = {}

    @property
    def time(self) -> float:
        return self.now / NS_PER_S

    @property
    def scheduled(self) -> int:
        return self._seq

    @property
    def pending(self) -> int:
        return len(self._heap) - len(self._cancelled)

    def at(self, t_ns: int, fn: Callable[[Any], None], arg: Any = None) -> int:
        self._seq += 1
        heappush(self._heap, (t_ns, self._seq, fn, arg))
        return self._seq

    def after(self, delay_ns: int, fn: Callable[[Any], None], arg: Any = None) -> int:
        self._seq += 1
        heappush(self._heap, (self.now + delay_ns, self._seq, fn, arg))
        return self._seq

    def schedule(self, delay: float, action: Callable[[], Any]) -> EventHandle:
        if delay < 0:
            raise ValueError(f"negative delay {delay!r}")
        if self.finished:
            raise SimulationError("simulation already finished")
        t = self.now + to_ns(delay)
        handle = EventHandle(self._seq + 1, t)
        self.at(t, self._fire, (handle, action))
        return handle

    def _fire(self, item):
        handle, action = item
        handle.fired = True
        action()

    def cancel(self, handle: EventHandle) -> bool:
        if not handle.pending:
            return False
        handle.cancelled = True
        self._cancelled.add(handle.seq)
        self.cancelled_count += 1
        return True

    def rng(self, label: str) -> RngStream:
        stream = self._streams.get(label)
        if stream is None:
            stream = self._streams[label] = RngStream(self.seed, label)
        return stream

    def run_until(self, t_end: float) -> float:
        end = to_ns(t_end)
        if end < self.now:
            raise ValueError(f"t_end {t_end} is before the current time {self.time}")
        heap = self._heap
        cancelled = self._cancelled
        executed = 0
        try:
            while heap and heap[0][0] <= end:
                t, seq, fn, arg = heappop(heap)
                if cancelled and seq in cancelled:
                    cancelled.discard(seq)
                    continue
                self.now = t
                fn(arg)
                executed += 1
        finally:
            self.executed += executed
        self.now = end
        return self.time

    def finish(self) -> None:
        self.finished = True
