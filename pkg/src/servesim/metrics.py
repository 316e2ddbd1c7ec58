"""Trace statistics, phase breakdowns, device busy time and energy."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

from .model import InvalidField

PHASES = (
    "prep_queue", "prep", "transfer_in", "batch_queue", "reload",
    "inference", "transfer_out", "broker_publish", "broker_wait", "broker_consume",
)
PHASE_INDEX = {name: i for i, name in enumerate(PHASES)}

# Phase groups reported as shares of end-to-end latency.
SHARE_GROUPS = {
    "prep": ("prep",),
    "queue": ("prep_queue", "batch_queue"),
    "transfer": ("transfer_in", "transfer_out"),
    "inference": ("inference",),
    "broker": ("broker_publish", "broker_wait", "broker_consume"),
    "reload": ("reload",),
}


class ConsistencyError(RuntimeError):
    """A request's phase durations do not add up to its latency."""


@dataclass(frozen=True)
class DevicePower:
    idle_watts: float
    active_watts: float

    def __post_init__(self):
        if self.idle_watts < 0:
            raise InvalidField("idle_watts", "must be >= 0")
        if self.active_watts < self.idle_watts:
            raise InvalidField("active_watts", "must be >= idle_watts")


@dataclass(frozen=True)
class EnergyModel:
    cpu: DevicePower = DevicePower(25.0, 253.0)
    gpu: DevicePower = DevicePower(80.0, 450.0)


@dataclass(frozen=True)
class PhaseBreakdown:
    """Mean microseconds per phase; absent phases are zero."""

    prep_queue: float = 0.0
    prep: float = 0.0
    transfer_in: float = 0.0
    batch_queue: float = 0.0
    reload: float = 0.0
    inference: float = 0.0
    transfer_out: float = 0.0
    broker_publish: float = 0.0
    broker_wait: float = 0.0
    broker_consume: float = 0.0

    @property
    def total(self) -> float:
        return sum(getattr(self, p) for p in PHASES)

    def share(self, group: str) -> float:
        total = self.total
        if total <= 0:
            return 0.0
        return sum(getattr(self, p) for p in SHARE_GROUPS[group]) / total


class RequestRecord(NamedTuple):
    id: object
    image: str
    issued: int
    completed: int
    phases: tuple  # ((phase_index, start, end), ...) in path order

    @property
    def latency(self) -> int:
        return self.completed - self.issued

    def durations(self) -> list[int]:
        out = [0] * len(PHASES)
        for idx, start, end in self.phases:
            out[idx] += end - start
        return out


@dataclass(frozen=True)
class DeviceUsage:
    name: str
    busy_us: float  # device-equivalent busy time inside the window
    multiplicity: int = 1

    def utilization(self, wall_us: int) -> float:
        return self.busy_us / wall_us if wall_us > 0 else 0.0


@dataclass(frozen=True)
class RunReport:
    throughput: float
    latency_mean: float
    latency_p50: int
    latency_p99: int
    breakdown: PhaseBreakdown
    completions: int
    warm_up_discarded: int
    window_us: int
    devices: tuple = ()
    utilization: dict = field(default_factory=dict)
    energy_j: dict = field(default_factory=dict)
    seed: int = 0
    config: Optional[dict] = None
    notes: tuple = ()

    def share(self, group: str) -> float:
        return self.breakdown.share(group)

    @property
    def energy_cpu_j(self) -> float:
        return self.energy_j.get("cpu", 0.0)

    @property
    def energy_gpu_j(self) -> float:
        return sum(v for k, v in self.energy_j.items() if k.startswith("gpu"))


def percentile(samples: Sequence[int], p: float) -> int:
    """Nearest-rank percentile: the ceil(p*n)-th smallest sample."""
    if not samples:
        raise ValueError("percentile of an empty sample")
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1]")
    ordered = sorted(samples)
    rank = max(1, math.ceil(p * len(ordered) - 1e-9))
    return ordered[rank - 1]


def energy_per_image(busy_us: float, wall_us: float, completions: int, power: DevicePower) -> float:
    """Joules per completed request for one device over the window."""
    if completions <= 0:
        raise ValueError("energy per image needs at least one completion")
    if wall_us <= 0:
        raise ValueError("measurement window must be positive")
    watt_us = power.idle_watts * wall_us + (power.active_watts - power.idle_watts) * busy_us
    return watt_us * 1e-6 / completions


class BusyMeter:
    """Integrates the number of busy servers over time.

    With `union=True` the device counts as busy whenever any server is
    active, which is how concurrent streams on one GPU behave.
    """

    __slots__ = ("active", "since", "integral", "union")

    def __init__(self, union: bool = False):
        self.active = 0
        self.since = 0
        self.integral = 0
        self.union = union

    def _level(self) -> int:
        return (1 if self.active else 0) if self.union else self.active

    def change(self, now: int, delta: int) -> None:
        active = self.active
        if active:
            self.integral += (1 if self.union else active) * (now - self.since)
        self.since = now
        self.active = active + delta

    def value_at(self, now: int) -> int:
        return self.integral + self._level() * (now - self.since)


def finalize_report(records: Sequence[RequestRecord], devices: Sequence[DeviceUsage],
                    energy: EnergyModel, window: tuple[int, int], *,
                    warm_up: int = 0, seed: int = 0, config: Optional[dict] = None,
                    notes: tuple = ()) -> RunReport:
    if not records:
        raise ValueError("no completions inside the measurement window")
    start, end = window
    wall = end - start
    if wall <= 0:
        raise ValueError("measurement window must be positive")
    sums = [0] * len(PHASES)
    latencies = []
    for rec in records:
        d = rec.durations()
        if sum(d) != rec.latency:
            raise ConsistencyError(
                f"request {rec.id}: phases sum to {sum(d)} us but latency is {rec.latency} us")
        for i, v in enumerate(d):
            if v < 0:
                raise ConsistencyError(f"request {rec.id}: negative {PHASES[i]} duration")
            sums[i] += v
        latencies.append(rec.latency)
    n = len(records)
    breakdown = PhaseBreakdown(**{p: sums[i] / n for i, p in enumerate(PHASES)})
    util = {}
    joules = {}
    for dev in devices:
        util[dev.name] = dev.utilization(wall)
        power = energy.cpu if dev.name == "cpu" else energy.gpu
        joules[dev.name] = energy_per_image(dev.busy_us, wall, n, power)
    return RunReport(
        throughput=n * 1e6 / wall,
        latency_mean=sum(latencies) / n,
        latency_p50=percentile(latencies, 0.5),
        latency_p99=percentile(latencies, 0.99),
        breakdown=breakdown,
        completions=n,
        warm_up_discarded=warm_up,
        window_us=wall,
        devices=tuple(devices),
        utilization=util,
        energy_j=joules,
        seed=seed,
        config=config,
        notes=notes,
    )
