"""Queueing stations shared by the single- and two-stage simulations."""

from __future__ import annotations

from collections import deque
from typing import Callable

from .engine import Engine, EventHandle
from .model import BatcherConfig, DispatchNow, batcher_decide


class BatchStage:
    """A FIFO batch queue in front of `servers` identical executors.

    `on_dispatch(batch)` is called with the list of dispatched items; the
    executor stays taken until `release()` is called. Dispatch decisions are
    only taken while an executor is free, so the delay bound holds whenever
    capacity is available.
    """

    def __init__(self, engine: Engine, config: BatcherConfig, servers: int,
                 on_dispatch: Callable[[list], None]):
        if servers < 1:
            raise ValueError("a batch stage needs at least one executor")
        self.engine = engine
        self.config = config
        self.free = servers
        self.servers = servers
        self.on_dispatch = on_dispatch
        self.times: deque = deque()
        self.items: deque = deque()
        self._timer: EventHandle | None = None
        self.batches_dispatched = 0
        self.max_batch_seen = 0

    def __len__(self) -> int:
        return len(self.items)

    def put(self, item) -> None:
        self.times.append(self.engine.now)
        self.items.append(item)
        if self.free:
            self._poll()

    def release(self) -> None:
        self.free += 1
        self._poll()

    def _on_timer(self) -> None:
        self._timer = None
        self._poll()

    def _poll(self) -> None:
        engine = self.engine
        max_batch = self.config.max_batch
        while self.free and self.items:
            if len(self.items) >= max_batch:
                n = max_batch  # full batch: same answer batcher_decide gives, minus the call
            else:
                decision = batcher_decide(self.times, self.config, engine.now)
                n = decision.count if type(decision) is DispatchNow else 0
            if n:
                popt = self.times.popleft
                popi = self.items.popleft
                batch = [popi() for _ in range(n)]
                for _ in range(n):
                    popt()
                self.free -= 1
                self.batches_dispatched += 1
                if n > self.max_batch_seen:
                    self.max_batch_seen = n
                if self._timer is not None:
                    engine.cancel(self._timer)
                    self._timer = None
                self.on_dispatch(batch)
                continue
            when = decision.time
            if when is not None and (self._timer is None or self._timer.fire_at != when):
                if self._timer is not None:
                    engine.cancel(self._timer)
                self._timer = engine.schedule(when, self._on_timer, kind="batch_timer")
            break


class FifoServer:
    """Single-server FIFO resource where each job carries its own duration.

    Used for host-device links: a job occupies the link for `duration`
    microseconds, and `done(arg)` fires at its end.
    """

    __slots__ = ("engine", "jobs", "busy", "busy_us")

    def __init__(self, engine: Engine):
        self.engine = engine
        self.jobs: deque = deque()
        self.busy = False
        self.busy_us = 0

    def submit(self, duration: int, done: Callable, arg) -> None:
        if self.busy:
            self.jobs.append((duration, done, arg))
        else:
            self._start(duration, done, arg)

    def _start(self, duration, done, arg) -> None:
        self.busy = True
        self.busy_us += duration
        self.engine.post(self.engine.now + duration, self._finish, done, arg)

    def _finish(self, done, arg) -> None:
        if self.jobs:
            self._start(*self.jobs.popleft())
        else:
            self.busy = False
        done(arg)


class ServerPool:
    """`servers` identical FIFO servers fed from one queue (an M-server station).

    `start(item)` is invoked when an item gets a server; the owner must call
    `release()` when that server becomes free again.
    """

    __slots__ = ("free", "queue", "start")

    def __init__(self, servers: int, start: Callable):
        if servers < 1:
            raise ValueError("a server pool needs at least one server")
        self.free = servers
        self.queue: deque = deque()
        self.start = start

    def put(self, item) -> None:
        if self.free:
            self.free -= 1
            self.start(item)
        else:
            self.queue.append(item)

    def release(self) -> None:
        if self.queue:
            self.start(self.queue.popleft())
        else:
            self.free += 1
