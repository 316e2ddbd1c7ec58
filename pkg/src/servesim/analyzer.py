"""Operational-law bounds for a scenario, used as an oracle for the simulator.

The model is asymptotic: each station on the request path has a service
demand and a number of servers; throughput can never exceed the smallest
servers/demand ratio, and latency can never drop below the zero-load path
time or C / X_max.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

from .config import ScenarioConfig, apply_overrides
from .metrics import RunReport
from .model import (
    ImageClass, PrepPlacement, RunMode, inference_batch_time, prep_service_time, transfer_time,
)


@dataclass(frozen=True)
class StationDemand:
    station: str
    demand_us: float  # per-request demand, already divided by the visit fraction
    servers: int

    @property
    def capacity(self) -> float:
        """Requests per second."""
        return self.servers * 1e6 / self.demand_us


@dataclass(frozen=True)
class OperationalBounds:
    x_max: float  # requests per second
    r_zero: float  # microseconds
    stations: tuple = ()

    @property
    def bottleneck(self) -> str:
        return min(self.stations, key=lambda s: s.capacity).station

    def r_lower(self, concurrency: int) -> float:
        return max(self.r_zero, concurrency * 1e6 / self.x_max)

    def saturating(self, concurrency: int) -> bool:
        return concurrency >= 4 * self.x_max * self.r_zero / 1e6

    def capacity(self, prefix: str) -> float:
        """Aggregate capacity of the stations whose label starts with `prefix`."""
        caps = [s.capacity for s in self.stations if s.station.startswith(prefix)]
        if not caps:
            raise KeyError(prefix)
        # per-GPU stations split the traffic evenly, so the slowest one limits the group
        return min(caps)


def _image_weights(cfg: ScenarioConfig) -> list[tuple[ImageClass, float]]:
    classes = cfg.image_classes()
    if cfg.workload.mix:
        return [(classes[n], w) for n, w in cfg.workload.mix.items() if w > 0]
    return [(classes[cfg.workload.image], 1.0)]


def _mean(weights, fn) -> float:
    return sum(w * fn(img) for img, w in weights)


def _hold(batcher) -> int:
    # a lone request waits out the delay bound before a partial batch leaves
    if batcher.max_batch > 1 and batcher.mode == "dynamic":
        return batcher.max_delay_us
    return 0


def amortized_demand(max_batch: int, per_batch: Callable[[int], float]) -> float:
    """Best-case per-request demand of a batched station: min over b of per_batch(b) / b."""
    return min(per_batch(b) / b for b in range(1, max_batch + 1))


def tandem_bounds(stations: Iterable[StationDemand]) -> OperationalBounds:
    """Bounds for stations visited once each in series, with unbatched demands."""
    stations = tuple(stations)
    if not stations:
        raise ValueError("a pipeline needs at least one station")
    return OperationalBounds(min(s.capacity for s in stations),
                             sum(s.demand_us for s in stations), stations)


def zero_load_breakdown(cfg: ScenarioConfig, image: ImageClass,
                        mode: Optional[RunMode] = None) -> dict[str, int]:
    """Phase durations of a request travelling alone through the server."""
    mode = mode or cfg.workload.mode
    link = cfg.resources.link
    model = cfg.model
    gpu_prep = cfg.prep.placement is PrepPlacement.GPU
    out: dict[str, int] = {}
    if mode is not RunMode.INFERENCE_ONLY:
        prof = cfg.prep.profile()
        if gpu_prep:
            out["transfer_in"] = transfer_time(image.compressed_bytes, link)
            out["prep_queue"] = _hold(cfg.prep.gpu_batcher)
        out["prep"] = prep_service_time(prof, cfg.prep.placement, [image])
        if mode is RunMode.PREP_ONLY:
            return out
    out["batch_queue"] = _hold(cfg.batcher)
    if mode is RunMode.INFERENCE_ONLY or not gpu_prep:
        out["transfer_in"] = out.get("transfer_in", 0) + transfer_time(model.bytes_per_input, link)
    out["inference"] = inference_batch_time(model, 1)
    out["transfer_out"] = transfer_time(model.output_bytes, link)
    return out


def compute_bounds(cfg: ScenarioConfig, mode: Optional[RunMode] = None) -> OperationalBounds:
    mode = mode or cfg.workload.mode
    res = cfg.resources
    link = res.link
    model = cfg.model
    gpus = res.num_gpus
    weights = _image_weights(cfg)
    gpu_prep = cfg.prep.placement is PrepPlacement.GPU
    stations: list[StationDemand] = []

    if mode is not RunMode.INFERENCE_ONLY:
        prof = cfg.prep.profile()
        if gpu_prep:
            pb = cfg.prep.gpu_batcher.max_batch
            item = _mean(weights, prof.item_us)
            demand = amortized_demand(pb, lambda b: prof.fixed_us + b * item)
            up = _mean(weights, lambda img: transfer_time(img.compressed_bytes, link))
            for g in range(gpus):
                stations.append(StationDemand(f"gpu_prep_{g}", demand / gpus, res.gpu_prep_streams))
                stations.append(StationDemand(f"link_in_{g}", up / gpus, 1))
        else:
            demand = _mean(weights, lambda img: prep_service_time(prof, PrepPlacement.CPU, [img]))
            stations.append(StationDemand("cpu_prep", demand, res.cpu_prep_processes))

    if mode is not RunMode.PREP_ONLY:
        mb = cfg.batcher.max_batch
        host_path = mode is RunMode.INFERENCE_ONLY or not gpu_prep

        def instance_time(b: int) -> float:
            t = inference_batch_time(model, b)
            if host_path:
                t += transfer_time(b * model.bytes_per_input, link)
            return t

        inst = amortized_demand(mb, instance_time)
        out = amortized_demand(mb, lambda b: transfer_time(b * model.output_bytes, link))
        for g in range(gpus):
            stations.append(StationDemand(f"gpu_{g}", inst / gpus, res.inference_instances_per_gpu))
            stations.append(StationDemand(f"link_out_{g}", out / gpus, 1))
            if host_path:
                up = amortized_demand(mb, lambda b: transfer_time(b * model.bytes_per_input, link))
                stations.append(StationDemand(f"link_in_{g}", up / gpus, 1))

    x_max = min(s.capacity for s in stations)
    r_zero = _mean(weights, lambda img: sum(zero_load_breakdown(cfg, img, mode).values()))
    return OperationalBounds(x_max, r_zero, tuple(stations))


# ------------------------------------------------------------ validation

@dataclass(frozen=True)
class Check:
    name: str
    value: float
    limit: float
    passed: bool
    exempt: bool = False


@dataclass(frozen=True)
class ValidationResult:
    checks: tuple
    notes: tuple = ()

    @property
    def passed(self) -> bool:
        return all(c.passed or c.exempt for c in self.checks)

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def validate_sim(report: RunReport, bounds: OperationalBounds, concurrency: int, *,
                 eviction: bool = False, tolerance: float = 0.01,
                 saturation_floor: float = 0.95) -> ValidationResult:
    """Compare a simulated report against the operational bounds."""
    x = report.throughput
    r = report.latency_mean
    notes = []
    if eviction:
        notes.append("bound exempt: eviction regime")
    checks = [Check("throughput_upper", x / bounds.x_max, 1 + tolerance,
                    x <= bounds.x_max * (1 + tolerance), exempt=eviction)]
    if bounds.saturating(concurrency):
        checks.append(Check("saturation", x / bounds.x_max, saturation_floor,
                            x >= saturation_floor * bounds.x_max, exempt=eviction))
    r_low = bounds.r_lower(concurrency)
    checks.append(Check("latency_lower", r / r_low, 1 - tolerance,
                        r >= r_low * (1 - tolerance), exempt=eviction))
    residual = abs(concurrency - x * r / 1e6) / concurrency
    checks.append(Check("littles_law", residual, tolerance, residual <= tolerance))
    return ValidationResult(tuple(checks), tuple(notes))


# ---------------------------------------------------------------- search

@dataclass(frozen=True)
class SearchPoint:
    params: tuple  # ((dotted path, value), ...) in sorted path order
    throughput: float
    p99_us: int
    feasible: bool


@dataclass(frozen=True)
class SearchResult:
    best: Optional[SearchPoint]
    frontier: tuple = field(default_factory=tuple)

    @property
    def feasible(self) -> bool:
        return self.best is not None


def config_search(base: ScenarioConfig, space: dict[str, Iterable], p99_bound_us: float, *,
                  evaluate: Optional[Callable[[ScenarioConfig], RunReport]] = None,
                  seed: Optional[int] = None) -> SearchResult:
    """Grid search for the highest-throughput point whose p99 meets the bound.

    Ties go to the lower p99, then to the lexicographically smaller point.
    An empty feasible set returns best=None with the full frontier.
    """
    if evaluate is None:
        from .pipeline import run_pipeline
        evaluate = run_pipeline
    keys = sorted(space)
    grids = [list(space[k]) for k in keys]
    if seed is not None:
        base = dataclasses.replace(base, seed=seed)
    points = []
    for combo in itertools.product(*grids):
        overrides = dict(zip(keys, combo))
        cfg = apply_overrides(base, overrides)
        rep = evaluate(cfg)
        points.append(SearchPoint(tuple(zip(keys, combo)), rep.throughput, rep.latency_p99,
                                  rep.latency_p99 <= p99_bound_us))
    feasible = [p for p in points if p.feasible]
    best = None
    if feasible:
        best = min(feasible, key=lambda p: (-p.throughput, p.p99_us, p.params))
    return SearchResult(best, tuple(points))


def required_concurrency(bounds: OperationalBounds, factor: float = 4.0) -> int:
    """Smallest concurrency that counts as saturating for these bounds."""
    return max(1, math.ceil(factor * bounds.x_max * bounds.r_zero / 1e6))
