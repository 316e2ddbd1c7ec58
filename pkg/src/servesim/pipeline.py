"""Closed-loop simulation of a single-DNN inference server.

Request paths per placement:

* CPU prep: prep_queue -> prep (one process per image) -> batch_queue on the
  least-loaded GPU -> transfer_in (decoded tensors, instance held) ->
  inference -> transfer_out.
* GPU prep: transfer_in (compressed bytes) on the GPU chosen at issue ->
  prep_queue -> batched prep on a GPU stream -> batch_queue (inputs resident
  in GPU memory, may be evicted) -> reload of evicted inputs -> inference ->
  transfer_out.

InferenceOnly skips prep and ships decoded tensors over the host path;
PrepOnly stops after prep.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

from .config import ScenarioConfig, to_dict
from .engine import Engine, RngStream, StopCondition, round_us
from .memory import GpuMemory
from .metrics import (
    PHASE_INDEX, BusyMeter, DeviceUsage, RequestRecord, RunReport, finalize_report,
)
from .model import (
    PrepPlacement, RunMode, inference_batch_time, transfer_time,
)
from .stations import BatchStage, FifoServer, ServerPool

P_PREP_QUEUE = PHASE_INDEX["prep_queue"]
P_PREP = PHASE_INDEX["prep"]
P_TRANSFER_IN = PHASE_INDEX["transfer_in"]
P_BATCH_QUEUE = PHASE_INDEX["batch_queue"]
P_RELOAD = PHASE_INDEX["reload"]
P_INFERENCE = PHASE_INDEX["inference"]
P_TRANSFER_OUT = PHASE_INDEX["transfer_out"]


class Request:
    __slots__ = ("id", "image", "issued", "marks", "gpu")

    def __init__(self, rid: int, image, issued: int):
        self.id = rid
        self.image = image
        self.issued = issued
        # (phase, end) pairs; each phase runs from the previous mark's end
        self.marks: list = []
        self.gpu = -1

    def record(self, completed: int) -> RequestRecord:
        phases = []
        start = self.issued
        for idx, end in self.marks:
            phases.append((idx, start, end))
            start = end
        return RequestRecord(self.id, self.image.name, self.issued, completed, tuple(phases))


class _Gpu:
    def __init__(self, sim: "PipelineSim", index: int):
        self.index = index
        self.outstanding = 0
        self.link_in = FifoServer(sim.engine)
        self.link_out = FifoServer(sim.engine)
        self.busy = BusyMeter(union=True)
        self.memory: Optional[GpuMemory] = None
        self.infer = BatchStage(sim.engine, sim.cfg.batcher,
                                sim.cfg.resources.inference_instances_per_gpu,
                                lambda batch, g=self: sim._infer_dispatch(g, batch))
        self.prep: Optional[BatchStage] = None


class PipelineSim:
    def __init__(self, cfg: ScenarioConfig, mode: Optional[RunMode] = None):
        self.cfg = cfg
        self.mode = mode or cfg.workload.mode
        self.placement = cfg.prep.placement
        self.engine = Engine()
        self.link = cfg.resources.link
        self.profile = cfg.prep.profile()
        self.model = cfg.model
        self.jitter = cfg.jitter
        self.rng_mix = RngStream(cfg.seed, "workload")
        self.rng_jitter = RngStream(cfg.seed, "jitter")
        classes = cfg.image_classes()
        if cfg.workload.mix:
            self.mix_values = [classes[n] for n in cfg.workload.mix]
            self.mix_weights = list(cfg.workload.mix.values())
            self.single_image = None
        else:
            self.single_image = classes[cfg.workload.image]
        self.gpus = [_Gpu(self, i) for i in range(cfg.resources.num_gpus)]
        self.gpu_prep = self.placement is PrepPlacement.GPU and self.mode is not RunMode.INFERENCE_ONLY
        if self.gpu_prep:
            for g in self.gpus:
                g.prep = BatchStage(self.engine, cfg.prep.gpu_batcher, cfg.resources.gpu_prep_streams,
                                    lambda batch, g=g: self._gpu_prep_dispatch(g, batch))
                if cfg.gpu_memory.enabled and self.mode is RunMode.END_TO_END:
                    g.memory = GpuMemory(cfg.gpu_memory.capacity_bytes)
        self.cpu_busy = BusyMeter()
        self.cpu_procs = cfg.resources.cpu_prep_processes
        self.cpu_pool = ServerPool(self.cpu_procs, self._cpu_prep_start)
        self._prep_time_cache: dict = {}
        self._next_id = 0
        self.warm_up = cfg.workload.effective_warm_up
        self.total = cfg.workload.total_requests
        self.records: list[RequestRecord] = []
        self.trace_all = False
        self.all_records: list[RequestRecord] = []
        self.window_start: Optional[int] = None
        self.last_completion = 0
        self._snap: dict = {}
        self.max_in_flight = 0
        self.in_flight = 0

    # ------------------------------------------------------------ helpers

    def _jit(self, d: int, amount: float) -> int:
        if amount <= 0.0:
            return d
        return round_us(d * (1.0 - amount + 2.0 * amount * self.rng_jitter.random()))

    def _cpu_prep_time(self, image) -> int:
        t = self._prep_time_cache.get(image.name)
        if t is None:
            t = round_us(self.profile.fixed_us + self.profile.item_us(image))
            self._prep_time_cache[image.name] = t
        return t

    def _least_loaded(self) -> "_Gpu":
        best = self.gpus[0]
        for g in self.gpus[1:]:
            if g.outstanding < best.outstanding:
                best = g
        return best

    # ------------------------------------------------------------- issue

    def issue(self) -> None:
        now = self.engine.now
        image = self.single_image
        if image is None:
            image = self.rng_mix.choice(self.mix_values, self.mix_weights)
        req = Request(self._next_id, image, now)
        self._next_id += 1
        self.in_flight += 1
        if self.mode is RunMode.INFERENCE_ONLY:
            self._to_batch_queue(req, self._route(req))
        elif self.placement is PrepPlacement.CPU:
            self.cpu_pool.put(req)
        else:
            g = self._route(req)
            g.link_in.submit(transfer_time(image.compressed_bytes, self.link),
                             self._gpu_upload_done, req)

    def _route(self, req: Request) -> "_Gpu":
        g = self._least_loaded()
        g.outstanding += 1
        req.gpu = g.index
        return g

    # ------------------------------------------------------------ CPU prep

    def _cpu_prep_start(self, req: Request) -> None:
        now = self.engine.now
        req.marks.append((P_PREP_QUEUE, now))
        self.cpu_busy.change(now, 1)
        d = self._jit(self._cpu_prep_time(req.image), self.jitter.prep)
        self.engine.post(now + d, self._cpu_prep_done, req)

    def _cpu_prep_done(self, req: Request) -> None:
        now = self.engine.now
        req.marks.append((P_PREP, now))
        self.cpu_busy.change(now, -1)
        self.cpu_pool.release()
        if self.mode is RunMode.PREP_ONLY:
            self.complete(req)
        else:
            self._to_batch_queue(req, self._route(req))

    # ------------------------------------------------------------ GPU prep

    def _gpu_upload_done(self, req: Request) -> None:
        req.marks.append((P_TRANSFER_IN, self.engine.now))
        self.gpus[req.gpu].prep.put(req)

    def _gpu_prep_dispatch(self, g: _Gpu, batch: list) -> None:
        now = self.engine.now
        for req in batch:
            req.marks.append((P_PREP_QUEUE, now))
        prof = self.profile
        d = round_us(prof.fixed_us + sum(prof.item_us(r.image) for r in batch))
        d = self._jit(d, self.jitter.prep)
        g.busy.change(now, 1)
        self.engine.post(now + d, self._gpu_prep_done, g, batch)

    def _gpu_prep_done(self, g: _Gpu, batch: list) -> None:
        now = self.engine.now
        g.busy.change(now, -1)
        for req in batch:
            req.marks.append((P_PREP, now))
        if self.mode is RunMode.PREP_ONLY:
            for req in batch:
                self.complete(req)
        else:
            nbytes = self.model.bytes_per_input
            for req in batch:
                if g.memory is not None:
                    g.memory.admit(req.id, nbytes)
                self._to_batch_queue(req, g)
        g.prep.release()

    # ----------------------------------------------------------- inference

    def _to_batch_queue(self, req: Request, g: _Gpu) -> None:
        g.infer.put(req)

    def _infer_dispatch(self, g: _Gpu, batch: list) -> None:
        now = self.engine.now
        for req in batch:
            req.marks.append((P_BATCH_QUEUE, now))
        if self.gpu_prep:
            mem = g.memory
            reload_us = 0
            if mem is not None:
                for req in batch:
                    if mem.is_evicted(req.id):
                        reload_us += mem.reload_cost(req.id, self.link)
                    else:
                        mem.pin(req.id)
            if reload_us:
                g.link_in.submit(reload_us, self._reload_done, (g, batch))
            else:
                self._infer_start(g, batch)
        else:
            nbytes = len(batch) * self.model.bytes_per_input
            g.link_in.submit(transfer_time(nbytes, self.link), self._host_upload_done, (g, batch))

    def _reload_done(self, arg) -> None:
        g, batch = arg
        now = self.engine.now
        for req in batch:
            req.marks.append((P_RELOAD, now))
        self._infer_start(g, batch)

    def _host_upload_done(self, arg) -> None:
        g, batch = arg
        now = self.engine.now
        for req in batch:
            req.marks.append((P_TRANSFER_IN, now))
        self._infer_start(g, batch)

    def _infer_start(self, g: _Gpu, batch: list) -> None:
        now = self.engine.now
        g.busy.change(now, 1)
        d = self._jit(inference_batch_time(self.model, len(batch)), self.jitter.inference)
        self.engine.post(now + d, self._infer_done, g, batch)

    def _infer_done(self, g: _Gpu, batch: list) -> None:
        now = self.engine.now
        g.busy.change(now, -1)
        for req in batch:
            req.marks.append((P_INFERENCE, now))
        if g.memory is not None:
            g.memory.release(len(batch) * self.model.bytes_per_input)
        out = transfer_time(len(batch) * self.model.output_bytes, self.link)
        g.link_out.submit(out, self._download_done, (g, batch))
        g.infer.release()

    def _download_done(self, arg) -> None:
        g, batch = arg
        now = self.engine.now
        for req in batch:
            req.marks.append((P_TRANSFER_OUT, now))
            self.complete(req)

    # ---------------------------------------------------------- completion

    def complete(self, req: Request) -> None:
        engine = self.engine
        now = engine.now
        if req.gpu >= 0:
            self.gpus[req.gpu].outstanding -= 1
        engine.completed += 1
        self.in_flight -= 1
        n = engine.completed
        if n > self.warm_up:
            self.records.append(req.record(now))
            self.last_completion = now
        elif self.trace_all:
            self.all_records.append(req.record(now))
        if n == self.warm_up:
            self._snapshot(now)
        if n < self.total:
            self.issue()

    def _snapshot(self, now: int) -> None:
        self.window_start = now
        self._snap = self._meters(now)

    def _meters(self, now: int) -> dict:
        out = {"cpu": self.cpu_busy.value_at(now)}
        for g in self.gpus:
            out[f"gpu{g.index}"] = g.busy.value_at(now)
        return out

    # ----------------------------------------------------------------- run

    def run(self) -> RunReport:
        if self.warm_up == 0:
            self._snapshot(0)
        for _ in range(self.cfg.workload.concurrency):
            self.issue()
        self.max_in_flight = self.in_flight
        self.engine.run(StopCondition(completions=self.total))
        if not self.records:
            raise RuntimeError("simulation produced no post-warm-up completions")
        end = self.last_completion
        start = self.window_start
        meters = self._meters(end)
        devices = []
        uses_cpu = self.placement is PrepPlacement.CPU and self.mode is not RunMode.INFERENCE_ONLY
        devices.append(DeviceUsage("cpu", (meters["cpu"] - self._snap["cpu"]) / self.cpu_procs
                                   if uses_cpu else 0.0, 1))
        for g in self.gpus:
            key = f"gpu{g.index}"
            devices.append(DeviceUsage(key, float(meters[key] - self._snap[key]), 1))
        notes = []
        evictions = sum(g.memory.evictions for g in self.gpus if g.memory is not None)
        if evictions:
            notes.append(f"evictions={evictions}")
            notes.append(f"reloads={sum(g.memory.reloads for g in self.gpus if g.memory)}")
        return finalize_report(
            self.records, devices, self.cfg.energy, (start, end),
            warm_up=self.warm_up, seed=self.cfg.seed, config=to_dict(self.cfg),
            notes=tuple(notes),
        )

    @property
    def evictions(self) -> int:
        return sum(g.memory.evictions for g in self.gpus if g.memory is not None)


def run_pipeline(cfg: ScenarioConfig, *, trace: Optional[list] = None) -> RunReport:
    """Simulate the scenario in its configured mode and return the report.

    When `trace` is a list, every completed request record (warm-up
    included) is appended to it in completion order.
    """
    sim = PipelineSim(cfg)
    sim.trace_all = trace is not None
    report = sim.run()
    if trace is not None:
        trace.extend(sim.all_records)
        trace.extend(sim.records)
    return report


def run_isolated(cfg: ScenarioConfig, mode: RunMode) -> RunReport:
    if mode is RunMode.END_TO_END:
        raise ValueError("run_isolated needs PrepOnly or InferenceOnly; use run_pipeline")
    cfg = dataclasses.replace(cfg, workload=dataclasses.replace(cfg.workload, mode=mode))
    return run_pipeline(cfg)
