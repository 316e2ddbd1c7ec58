"""GPU-memory residency for decoded inputs waiting on inference.

Waiting inputs are evicted oldest-enqueued first when a new one does not fit.
Inputs that belong to a running batch are pinned and never evicted; an
evicted input keeps a host copy and has to be reloaded over the link before
its batch can run.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

from .model import LinkModel, transfer_time


class ResidencyError(RuntimeError):
    pass


@dataclass
class AdmitResult:
    evicted: list = field(default_factory=list)

    @property
    def resident_without_eviction(self) -> bool:
        return not self.evicted


class GpuMemory:
    def __init__(self, capacity_bytes: int):
        if capacity_bytes <= 0:
            raise ValueError("GPU memory capacity must be positive")
        self.capacity = capacity_bytes
        self._waiting: OrderedDict = OrderedDict()  # key -> nbytes, oldest first
        self._evicted: dict = {}
        self.pinned_bytes = 0
        self.waiting_bytes = 0
        self.evictions = 0
        self.reloads = 0
        self.reload_time_us = 0

    @property
    def used(self) -> int:
        return self.pinned_bytes + self.waiting_bytes

    def is_evicted(self, key) -> bool:
        return key in self._evicted

    def _make_room(self, nbytes: int) -> list:
        evicted = []
        while self.used + nbytes > self.capacity and self._waiting:
            key, size = self._waiting.popitem(last=False)
            self.waiting_bytes -= size
            self._evicted[key] = size
            evicted.append(key)
        self.evictions += len(evicted)
        return evicted

    def admit(self, key, nbytes: int) -> AdmitResult:
        """Make `key` resident as a waiting input, evicting older waiters if needed."""
        if nbytes > self.capacity:
            raise ResidencyError(f"input of {nbytes} bytes exceeds GPU capacity {self.capacity}")
        evicted = self._make_room(nbytes)
        self._waiting[key] = nbytes
        self.waiting_bytes += nbytes
        return AdmitResult(evicted)

    def reload_cost(self, key, link: LinkModel) -> int:
        """Transfer time to bring an evicted input back; it becomes resident (pinned)."""
        if key not in self._evicted:
            raise ResidencyError(f"{key!r} is resident, nothing to reload")
        nbytes = self._evicted.pop(key)
        self._make_room(nbytes)
        # running inputs may overcommit once every waiter is gone
        self.pinned_bytes += nbytes
        cost = transfer_time(nbytes, link)
        self.reloads += 1
        self.reload_time_us += cost
        return cost

    def pin(self, key) -> None:
        """Move a resident waiting input into a running batch."""
        nbytes = self._waiting.pop(key)
        self.waiting_bytes -= nbytes
        self.pinned_bytes += nbytes

    def release(self, nbytes: int) -> None:
        self.pinned_bytes -= nbytes
