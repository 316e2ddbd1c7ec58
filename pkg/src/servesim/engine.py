"""Deterministic discrete-event engine.

Time is an integer number of microseconds. Events at the same instant fire in
insertion order, so a run is fully determined by what gets scheduled.
"""

from __future__ import annotations

import heapq
import math
import zlib
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


def round_us(value: float) -> int:
    """Round a duration to whole microseconds, halves going up."""
    return int(math.floor(value + 0.5))


# Heap entries are (fire_at, seq, fn, args) tuples. Cancelled sequence numbers
# go in a set and are skipped when popped.


class EventHandle:
    __slots__ = ("fire_at", "seq", "_engine")

    def __init__(self, fire_at: int, seq: int, engine: "Engine"):
        self.fire_at = fire_at
        self.seq = seq
        self._engine = engine

    @property
    def pending(self) -> bool:
        return self._engine._is_pending(self.fire_at, self.seq)


@dataclass(frozen=True)
class StopCondition:
    """Run until `completions` are reached, the clock passes `until`, or the queue drains.

    Leaving both fields as None means run until the queue is empty.
    """

    completions: Optional[int] = None
    until: Optional[int] = None


@dataclass(frozen=True)
class EngineStats:
    events_processed: int
    final_clock: int
    stopped_by: str  # "completions", "clock" or "exhausted"


class Engine:
    def __init__(self) -> None:
        self.now = 0
        self.completed = 0
        self._heap: list[tuple] = []
        self._cancelled: set[int] = set()
        self._seq = 0
        self._processed = 0

    def schedule(self, at: int, fn: Callable[..., Any], *args: Any, kind: str = "") -> EventHandle:
        if at < self.now:
            raise SchedulingError(f"event {kind or fn!r} scheduled at t={at} but clock is {self.now}")
        seq = self._seq
        self._seq = seq + 1
        heapq.heappush(self._heap, (at, seq, fn, args))
        return EventHandle(at, seq, self)

    def after(self, delay: int, fn: Callable[..., Any], *args: Any, kind: str = "") -> EventHandle:
        return self.schedule(self.now + delay, fn, *args, kind=kind)

    def post(self, at: int, fn: Callable[..., Any], *args: Any) -> None:
        """Like schedule() but returns no handle; for hot paths that never cancel."""
        if at < self.now:
            raise SchedulingError(f"event {fn!r} scheduled at t={at} but clock is {self.now}")
        heapq.heappush(self._heap, (at, self._seq, fn, args))
        self._seq += 1

    def _is_pending(self, at: int, seq: int) -> bool:
        # events leave the heap in key order, so anything keyed below the
        # current top has already fired or been discarded
        heap = self._heap
        if seq in self._cancelled or not heap:
            return False
        top = heap[0]
        return (at, seq) >= (top[0], top[1])

    def cancel(self, handle: EventHandle) -> bool:
        if not self._is_pending(handle.fire_at, handle.seq):
            return False
        self._cancelled.add(handle.seq)
        return True

    def pending(self) -> int:
        return len(self._heap) - len(self._cancelled)

    def run(self, stop: StopCondition = StopCondition()) -> EngineStats:
        heap = self._heap
        cancelled = self._cancelled
        pop = heapq.heappop
        target = stop.completions
        until = stop.until
        processed = 0
        reason = "exhausted"
        if target is not None and self.completed >= target:
            return EngineStats(0, self.now, "completions")
        if target is None:
            target = -1
        while heap:
            if until is not None and heap[0][0] > until and heap[0][1] not in cancelled:
                self.now = max(self.now, until)
                reason = "clock"
                break
            at, seq, fn, args = pop(heap)
            if cancelled and seq in cancelled:
                cancelled.discard(seq)
                continue
            self.now = at
            fn(*args)
            processed += 1
            if self.completed >= target >= 0:
                reason = "completions"
                break
        self._processed += processed
        return EngineStats(processed, self.now, reason)


class RngStream:
    """Named random stream; the same (seed, stream_id) always yields the same draws."""

    def __init__(self, seed: int, stream_id: str):
        self.seed = seed
        self.stream_id = stream_id
        ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(stream_id.encode())])
        self._gen = np.random.Generator(np.random.PCG64(ss))
        self._buf: list[float] = []

    def random(self) -> float:
        # numpy scalar calls are slow; draw in blocks
        if not self._buf:
            self._buf = self._gen.random(4096).tolist()
            self._buf.reverse()
        return self._buf.pop()

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def choice(self, values: list, weights: list[float]) -> Any:
        u = self.random()
        acc = 0.0
        for v, w in zip(values, weights):
            acc += w
            if u < acc:
                return v
        return values[-1]
