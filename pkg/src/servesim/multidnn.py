"""Two-stage detection -> identification pipeline with a broker or fused stages.

Brokered: a detection worker runs the detector on a frame, then publishes
one message per detected face, serially and while still holding the worker.
A consumer pool pulls messages off the broker and hands the faces to the
identification batcher, which batches across frames.

Fused: one instance runs detection and then identifies exactly that frame's
faces (in chunks of at most max_batch) before taking the next frame.

A frame completes when its last face is identified; its breakdown follows
that face.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

from .config import (
    BrokerKind, BrokerProfile, FanoutModel, ScenarioConfig, TwoStageSpec, to_dict,
)
from .engine import Engine, RngStream, StopCondition, round_us
from .metrics import PHASE_INDEX, BusyMeter, DeviceUsage, RequestRecord, RunReport, finalize_report
from .model import inference_batch_time
from .stations import BatchStage, ServerPool

__all__ = [
    "BrokerKind", "BrokerProfile", "FanoutModel", "TwoStageSpec",
    "broker_delay", "expand_frame", "run_two_stage", "zero_load_frame_latency",
]

P_QUEUE = PHASE_INDEX["prep_queue"]
P_INFERENCE = PHASE_INDEX["inference"]
P_BATCH_QUEUE = PHASE_INDEX["batch_queue"]
P_PUBLISH = PHASE_INDEX["broker_publish"]
P_WAIT = PHASE_INDEX["broker_wait"]
P_CONSUME = PHASE_INDEX["broker_consume"]


def broker_delay(kind: BrokerKind, message_bytes: int, profile: BrokerProfile) -> tuple[int, int]:
    """(publish, consume) time for one message."""
    if kind is BrokerKind.FUSED:
        raise ValueError("fused execution has no broker")
    if message_bytes < 0:
        raise ValueError("negative message size")
    extra = profile.per_byte_ns * message_bytes / 1000.0
    return round_us(profile.publish_us + extra), round_us(profile.consume_us + extra)


def _fanout_table(fanout: FanoutModel) -> Optional[tuple[list[int], list[float]]]:
    if fanout.distribution is None:
        return None
    pairs = sorted((int(k), p) for k, p in fanout.distribution.items())
    return [k for k, _ in pairs], [p for _, p in pairs]


def sample_faces(fanout: FanoutModel, rng: RngStream,
                 _table: Optional[tuple] = None) -> int:
    table = _table if _table is not None else _fanout_table(fanout)
    if table is None:
        return fanout.faces
    return rng.choice(table[0], table[1])


def expand_frame(frame_id: int, fanout: FanoutModel, rng: RngStream) -> list[tuple[int, int]]:
    """Face tasks for a detected frame, each tagged (frame_id, face_index)."""
    k = sample_faces(fanout, rng)
    return [(frame_id, j) for j in range(k)]


class _Frame:
    __slots__ = ("id", "issued", "marks", "pending", "last_face_marks")

    def __init__(self, fid: int, issued: int):
        self.id = fid
        self.issued = issued
        self.marks: list = []
        self.pending = 0
        self.last_face_marks: list = []


class _Face:
    __slots__ = ("frame", "index", "marks")

    def __init__(self, frame: _Frame, index: int):
        self.frame = frame
        self.index = index
        self.marks: list = []


class TwoStageSim:
    def __init__(self, cfg: ScenarioConfig, kind: Optional[BrokerKind] = None):
        if cfg.interconnect is None:
            raise ValueError("scenario has no interconnect block")
        self.cfg = cfg
        self.spec: TwoStageSpec = cfg.interconnect
        self.kind = kind or self.spec.kind
        self.engine = Engine()
        self.rng = RngStream(cfg.seed, "fanout")
        self._table = _fanout_table(self.spec.fanout)
        self.det_us = inference_batch_time(self.spec.detection, 1)
        self.gpu_busy = BusyMeter(union=True)
        if self.kind is BrokerKind.FUSED:
            self.frames = ServerPool(self.spec.fused_instances, self._fused_start)
        else:
            self.frames = ServerPool(self.spec.detection_workers, self._detect_start)
            self.pub_us, self.con_us = broker_delay(self.kind, self.spec.message_bytes,
                                                    self.spec.profile(self.kind))
            self.consumers = ServerPool(self.spec.consumers, self._consume_start)
            self.ident = BatchStage(self.engine, self.spec.batcher,
                                    self.spec.identification_instances, self._ident_dispatch)
        self.warm_up = cfg.workload.effective_warm_up
        self.total = cfg.workload.total_requests
        self.records: list[RequestRecord] = []
        self.window_start: Optional[int] = None
        self.last_completion = 0
        self._snap = 0
        self._next = 0
        self.faces_produced = 0
        self.faces_identified = 0

    # --------------------------------------------------------------- frames

    def issue(self) -> None:
        frame = _Frame(self._next, self.engine.now)
        self._next += 1
        self.frames.put(frame)

    def _faces(self) -> int:
        return sample_faces(self.spec.fanout, self.rng, self._table)

    def _fused_start(self, frame: _Frame) -> None:
        now = self.engine.now
        frame.marks.append((P_QUEUE, now))
        k = self._faces()
        self.faces_produced += k
        d = self.det_us
        mb = self.spec.batcher.max_batch
        left = k
        while left > 0:
            b = min(left, mb)
            d += inference_batch_time(self.spec.identification, b)
            left -= b
        self.gpu_busy.change(now, 1)
        self.engine.post(now + d, self._fused_done, frame, k)

    def _fused_done(self, frame: _Frame, k: int) -> None:
        now = self.engine.now
        self.gpu_busy.change(now, -1)
        frame.marks.append((P_INFERENCE, now))
        self.faces_identified += k
        self.frames.release()
        self._complete(frame, now)

    def _detect_start(self, frame: _Frame) -> None:
        now = self.engine.now
        frame.marks.append((P_QUEUE, now))
        self.gpu_busy.change(now, 1)
        self.engine.post(now + self.det_us, self._detect_done, frame)

    def _detect_done(self, frame: _Frame) -> None:
        now = self.engine.now
        self.gpu_busy.change(now, -1)
        frame.marks.append((P_INFERENCE, now))
        k = self._faces()
        if k == 0:
            self.frames.release()
            self._complete(frame, now)
            return
        self.faces_produced += k
        frame.pending = k
        # the worker publishes every face before it can take the next frame
        t = now
        for j in range(k):
            t += self.pub_us
            self.engine.post(t, self._published, _Face(frame, j))
        self.engine.post(t, self._worker_free)

    def _worker_free(self) -> None:
        self.frames.release()

    def _published(self, face: _Face) -> None:
        face.marks.append((P_PUBLISH, self.engine.now))
        self.consumers.put(face)

    def _consume_start(self, face: _Face) -> None:
        now = self.engine.now
        face.marks.append((P_WAIT, now))
        self.engine.post(now + self.con_us, self._consumed, face)

    def _consumed(self, face: _Face) -> None:
        face.marks.append((P_CONSUME, self.engine.now))
        self.consumers.release()
        self.ident.put(face)

    def _ident_dispatch(self, batch: list) -> None:
        now = self.engine.now
        for face in batch:
            face.marks.append((P_BATCH_QUEUE, now))
        self.gpu_busy.change(now, 1)
        d = inference_batch_time(self.spec.identification, len(batch))
        self.engine.post(now + d, self._ident_done, batch)

    def _ident_done(self, batch: list) -> None:
        now = self.engine.now
        self.gpu_busy.change(now, -1)
        for face in batch:
            face.marks.append((P_INFERENCE, now))
            self.faces_identified += 1
            frame = face.frame
            frame.pending -= 1
            if frame.pending == 0:
                frame.last_face_marks = face.marks
                self._complete(frame, now)
        self.ident.release()

    # ----------------------------------------------------------- completion

    def _complete(self, frame: _Frame, now: int) -> None:
        engine = self.engine
        engine.completed += 1
        n = engine.completed
        if n > self.warm_up:
            marks = frame.marks + frame.last_face_marks
            phases = []
            start = frame.issued
            for idx, end in marks:
                phases.append((idx, start, end))
                start = end
            self.records.append(RequestRecord(frame.id, "frame", frame.issued, now, tuple(phases)))
            self.last_completion = now
        if n == self.warm_up:
            self.window_start = now
            self._snap = self.gpu_busy.value_at(now)
        if n < self.total:
            self.issue()

    def run(self) -> RunReport:
        if self.warm_up == 0:
            self.window_start = 0
        for _ in range(self.cfg.workload.concurrency):
            self.issue()
        self.engine.run(StopCondition(completions=self.total))
        end = self.last_completion
        busy = self.gpu_busy.value_at(end) - self._snap
        devices = [DeviceUsage("cpu", 0.0), DeviceUsage("gpu0", float(busy))]
        return finalize_report(self.records, devices, self.cfg.energy, (self.window_start, end),
                               warm_up=self.warm_up, seed=self.cfg.seed, config=to_dict(self.cfg),
                               notes=(f"interconnect={self.kind.value}",))


def run_two_stage(cfg: ScenarioConfig, kind: Optional[BrokerKind] = None) -> RunReport:
    """Simulate the two-stage scenario; `kind` overrides the configured interconnect."""
    return TwoStageSim(cfg, kind).run()


def zero_load_frame_latency(cfg: ScenarioConfig, kind: BrokerKind, faces: int) -> RunReport:
    """Run frames one at a time with a fixed face count."""
    spec = dataclasses.replace(cfg.interconnect, kind=kind,
                               fanout=dataclasses.replace(cfg.interconnect.fanout, faces=faces,
                                                          distribution=None))
    wl = dataclasses.replace(cfg.workload, concurrency=1, warm_up=2, total_requests=12)
    return run_two_stage(dataclasses.replace(cfg, interconnect=spec, workload=wl))
