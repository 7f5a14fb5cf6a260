"""Deterministic discrete-event simulator and a lossy-free delayed network."""
from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass, field
from typing import Any, Callable


class Interrupt(Exception):
    """Aborts the running event without failing the simulation (node crash)."""


@dataclass(order=True)
class Event:
    time: float
    seq: int
    fn: Callable = field(compare=False)
    args: tuple = field(compare=False, default=())
    cancelled: bool = field(compare=False, default=False)

    def cancel(self) -> None:
        self.cancelled = True


class Simulator:
    """Single-threaded event loop over simulated seconds.

    Events with equal timestamps run in scheduling order, so a run is fully
    determined by the initial schedule and the seeded random streams.
    """

    def __init__(self):
        self.now = 0.0
        self._queue: list[Event] = []
        self._seq = itertools.count()

    def schedule(self, delay: float, fn: Callable, *args: Any) -> Event:
        ev = Event(self.now + max(0.0, delay), next(self._seq), fn, args)
        heapq.heappush(self._queue, ev)
        return ev

    def at(self, time: float, fn: Callable, *args: Any) -> Event:
        return self.schedule(time - self.now, fn, *args)

    def step(self) -> bool:
        while self._queue:
            ev = heapq.heappop(self._queue)
            if ev.cancelled:
                continue
            self.now = ev.time
            try:
                ev.fn(*ev.args)
            except Interrupt:
                pass
            return True
        return False

    def peek_time(self) -> float | None:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].time if self._queue else None

    def run_for(self, duration: float) -> None:
        self.run_until_time(self.now + duration)

    def run_until_time(self, end: float) -> None:
        while True:
            t = self.peek_time()
            if t is None or t > end:
                break
            self.step()
        self.now = max(self.now, end)

    def run_until(self, predicate: Callable[[], bool], timeout: float) -> bool:
        """Step until ``predicate()`` holds or ``timeout`` simulated seconds pass."""
        end = self.now + timeout
        while not predicate():
            t = self.peek_time()
            if t is None or t > end:
                self.now = max(self.now, end)
                return predicate()
            self.step()
        return True


class Network:
    """Point-to-point delivery with seeded uniform latency and optional
    bandwidth serialization delay. Messages to a dead node are dropped on
    arrival by the receiving node itself."""

    def __init__(self, sim: Simulator, seed: int, delay: tuple[float, float] = (0.001, 0.010),
                 bandwidth: float | None = None):
        self.sim = sim
        self.rng = random.Random(f"net:{seed}")
        self.delay = delay
        self.bandwidth = bandwidth
        self.sent = 0
        self.bytes = 0

    def latency(self, size: int = 0) -> float:
        lo, hi = self.delay
        d = self.rng.uniform(lo, hi)
        if self.bandwidth and size:
            d += size / self.bandwidth
        return d

    def send(self, fn: Callable, *args: Any, size: int = 0, extra: float = 0.0) -> Event:
        self.sent += 1
        self.bytes += size
        return self.sim.schedule(self.latency(size) + extra, fn, *args)
