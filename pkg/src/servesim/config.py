"""Scenario files: schema, validation, defaults, overrides and hashing.

A scenario is a JSON object (schema 1). Every block is optional and falls
back to defaults; unknown keys are rejected so typos in sweep scripts fail
loudly instead of silently running the default.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Union

from .metrics import EnergyModel
from .model import (
    CANONICAL_IMAGES, BatcherConfig, ImageClass, InvalidField, LinkModel, ModelProfile,
    PrepPlacement, RunMode, StageProfile,
)

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    """A scenario could not be parsed or validated; `path` is the dotted field path."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}" if path else reason)
        self.path = path
        self.reason = reason


# ---------------------------------------------------------------- blocks

@dataclass(frozen=True)
class Workload:
    image: str = "medium"
    # optional categorical mix {class name: weight}; overrides `image`
    mix: Optional[dict[str, float]] = None
    concurrency: int = 1
    total_requests: int = 20000
    # None means max(1000, 5 * concurrency)
    warm_up: Optional[int] = None
    mode: RunMode = RunMode.END_TO_END

    def __post_init__(self):
        if self.concurrency < 1:
            raise InvalidField("concurrency", "must be >= 1")
        if self.mix is not None:
            if not self.mix:
                raise InvalidField("mix", "must not be empty")
            if any(w < 0 for w in self.mix.values()):
                raise InvalidField("mix", "weights must be >= 0")
            if abs(sum(self.mix.values()) - 1.0) > 1e-9:
                raise InvalidField("mix", "weights must sum to 1")
        if self.warm_up is not None and self.warm_up < 0:
            raise InvalidField("warm_up", "must be >= 0")
        if self.effective_warm_up >= self.total_requests:
            raise InvalidField("total_requests",
                               f"must exceed the warm-up count ({self.effective_warm_up})")

    @property
    def effective_warm_up(self) -> int:
        if self.warm_up is not None:
            return self.warm_up
        return max(1000, 5 * self.concurrency)


@dataclass(frozen=True)
class ServerResources:
    cpu_prep_processes: int = 8
    gpu_prep_streams: int = 4
    inference_instances_per_gpu: int = 1
    num_gpus: int = 1
    link_latency_us: int = 10
    link_bandwidth_bytes_per_us: float = 12000.0

    def __post_init__(self):
        for name in ("cpu_prep_processes", "gpu_prep_streams",
                     "inference_instances_per_gpu", "num_gpus"):
            if getattr(self, name) < 1:
                raise InvalidField(name, "must be >= 1")
        LinkModel(self.link_latency_us, self.link_bandwidth_bytes_per_us)

    @property
    def link(self) -> LinkModel:
        return LinkModel(self.link_latency_us, self.link_bandwidth_bytes_per_us)


@dataclass(frozen=True)
class PrepConfig:
    placement: PrepPlacement = PrepPlacement.GPU
    cpu: StageProfile = StageProfile(fixed_us=2000.0, per_byte_ns=20.0, per_pixel_ns=20.0)
    gpu: StageProfile = StageProfile(fixed_us=2000.0, per_byte_ns=5.0, per_pixel_ns=5.0)
    # GPU preprocessing goes through its own dynamic batcher
    gpu_batcher: BatcherConfig = BatcherConfig(max_batch=8, max_delay_us=1000)

    def profile(self, placement: Optional[PrepPlacement] = None) -> StageProfile:
        return self.cpu if (placement or self.placement) is PrepPlacement.CPU else self.gpu


@dataclass(frozen=True)
class GpuMemoryConfig:
    enabled: bool = False
    capacity_bytes: int = 8 * 1024 ** 3

    def __post_init__(self):
        if self.capacity_bytes <= 0:
            raise InvalidField("capacity_bytes", "must be > 0")


@dataclass(frozen=True)
class JitterConfig:
    """Uniform multiplicative service-time noise: d * U(1 - j, 1 + j)."""

    prep: float = 0.0
    inference: float = 0.0

    def __post_init__(self):
        for name in ("prep", "inference"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise InvalidField(name, "must be in [0, 1)")


# ------------------------------------------------------- two-stage blocks

class BrokerKind(str, Enum):
    DISK = "disk"
    MEMORY = "memory"
    FUSED = "fused"


@dataclass(frozen=True)
class BrokerProfile:
    publish_us: float = 0.0
    consume_us: float = 0.0
    per_byte_ns: float = 0.0

    def __post_init__(self):
        for name in ("publish_us", "consume_us", "per_byte_ns"):
            if getattr(self, name) < 0:
                raise InvalidField(name, "must be >= 0")

    def dominates(self, other: "BrokerProfile") -> bool:
        return (self.publish_us >= other.publish_us and self.consume_us >= other.consume_us
                and self.per_byte_ns >= other.per_byte_ns)


@dataclass(frozen=True)
class FanoutModel:
    # fixed faces per frame, used when `distribution` is None
    faces: int = 25
    # categorical {count: probability}; JSON keys are strings
    distribution: Optional[dict[str, float]] = None
    # None: the identification model's decoded input size
    face_message_bytes: Optional[int] = None

    def __post_init__(self):
        if self.faces < 0:
            raise InvalidField("faces", "must be >= 0")
        if self.distribution is not None:
            if not self.distribution:
                raise InvalidField("distribution", "must not be empty")
            for k, p in self.distribution.items():
                try:
                    count = int(k)
                except ValueError:
                    raise InvalidField("distribution", f"count {k!r} is not an integer") from None
                if count < 0:
                    raise InvalidField("distribution", "counts must be >= 0")
                if p < 0:
                    raise InvalidField("distribution", "probabilities must be >= 0")
            if abs(sum(self.distribution.values()) - 1.0) > 1e-9:
                raise InvalidField("distribution", "probabilities must sum to 1")
        if self.face_message_bytes is not None and self.face_message_bytes < 0:
            raise InvalidField("face_message_bytes", "must be >= 0")


@dataclass(frozen=True)
class TwoStageSpec:
    kind: BrokerKind = BrokerKind.MEMORY
    disk: BrokerProfile = BrokerProfile(publish_us=1000.0, consume_us=1000.0)
    memory: BrokerProfile = BrokerProfile(publish_us=50.0, consume_us=50.0)
    fanout: FanoutModel = FanoutModel()
    detection: ModelProfile = ModelProfile(name="face-detector", alpha_us=10000.0, beta_us=5000.0,
                                           output_bytes=0)
    identification: ModelProfile = ModelProfile(name="face-embedder", input_width=160,
                                                input_height=160, alpha_us=2000.0,
                                                beta_us=300.0, output_bytes=512)
    batcher: BatcherConfig = BatcherConfig(max_batch=8, max_delay_us=1000)
    detection_workers: int = 1
    consumers: int = 1
    identification_instances: int = 1
    fused_instances: int = 1

    def __post_init__(self):
        for name in ("detection_workers", "consumers", "identification_instances",
                     "fused_instances"):
            if getattr(self, name) < 1:
                raise InvalidField(name, "must be >= 1")
        if not self.disk.dominates(self.memory):
            raise InvalidField("disk", "disk-backed profile must dominate the memory-backed one")

    def profile(self, kind: Optional[BrokerKind] = None) -> BrokerProfile:
        kind = kind or self.kind
        if kind is BrokerKind.FUSED:
            raise ValueError("fused execution has no broker profile")
        return self.disk if kind is BrokerKind.DISK else self.memory

    @property
    def message_bytes(self) -> int:
        if self.fanout.face_message_bytes is not None:
            return self.fanout.face_message_bytes
        return self.identification.bytes_per_input


# ------------------------------------------------------------- scenario

@dataclass(frozen=True)
class ScenarioConfig:
    schema: int = SCHEMA_VERSION
    name: str = ""
    seed: int = 0
    workload: Workload = Workload()
    # extra image classes by name, on top of small/medium/large
    images: dict[str, ImageClass] = field(default_factory=dict)
    resources: ServerResources = ServerResources()
    prep: PrepConfig = PrepConfig()
    model: ModelProfile = ModelProfile()
    batcher: BatcherConfig = BatcherConfig()
    gpu_memory: GpuMemoryConfig = GpuMemoryConfig()
    jitter: JitterConfig = JitterConfig()
    energy: EnergyModel = EnergyModel()
    interconnect: Optional[TwoStageSpec] = None
    # dotted paths that were filled from defaults when loading
    defaults_used: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if self.schema != SCHEMA_VERSION:
            raise InvalidField("schema", f"unsupported schema version {self.schema}")
        classes = self.image_classes()
        names = list(self.workload.mix) if self.workload.mix else [self.workload.image]
        for n in names:
            if n not in classes:
                raise InvalidField("workload.image" if not self.workload.mix else "workload.mix",
                                   f"unknown image class {n!r}; known: {sorted(classes)}")
        if self.gpu_memory.capacity_bytes <= self.model.bytes_per_input:
            raise InvalidField("gpu_memory.capacity_bytes", "must exceed model.bytes_per_input")

    def image_classes(self) -> dict[str, ImageClass]:
        out = dict(CANONICAL_IMAGES)
        out.update(self.images)
        return out

    @property
    def is_two_stage(self) -> bool:
        return self.interconnect is not None


# -------------------------------------------------------- load / emit

def _is_optional(tp) -> tuple[bool, Any]:
    origin = typing.get_origin(tp)
    if origin in (Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1 and len(typing.get_args(tp)) == 2:
            return True, args[0]
    return False, tp


def _type_name(tp) -> str:
    return {int: "an integer", float: "a number", str: "a string", bool: "a boolean"}.get(
        tp, getattr(tp, "__name__", str(tp)))


def _build(tp, value, path: str, used: list):
    optional, inner = _is_optional(tp)
    if value is None:
        if optional:
            return None
        raise ScenarioError(path, "must not be null")
    tp = inner
    if dataclasses.is_dataclass(tp):
        return _build_dataclass(tp, value, path, used)
    if isinstance(tp, type) and issubclass(tp, Enum):
        allowed = [m.value for m in tp]
        if value not in allowed:
            raise ScenarioError(path, f"must be one of {allowed}, got {value!r}")
        return tp(value)
    origin = typing.get_origin(tp)
    if origin is dict:
        _, vtype = typing.get_args(tp)
        if not isinstance(value, dict):
            raise ScenarioError(path, "must be an object")
        return {str(k): _build(vtype, v, f"{path}.{k}", used) for k, v in value.items()}
    if tp is bool:
        if not isinstance(value, bool):
            raise ScenarioError(path, "must be a boolean")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ScenarioError(path, "must be an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(path, "must be a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ScenarioError(path, "must be a string")
        return value
    raise ScenarioError(path, f"unsupported field type {_type_name(tp)}")


def _build_dataclass(cls, data, path: str, used: list):
    if not isinstance(data, dict):
        raise ScenarioError(path or "<root>", "must be an object")
    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls) if f.init and f.compare}
    for key in data:
        if key not in known:
            where = f"{path}.{key}" if path else key
            raise ScenarioError(where, f"unknown field (allowed: {', '.join(sorted(known))})")
    kwargs = {}
    for name, f in known.items():
        sub = f"{path}.{name}" if path else name
        if name in data:
            kwargs[name] = _build(hints[name], data[name], sub, used)
        else:
            used.append(sub)
    try:
        return cls(**kwargs)
    except InvalidField as exc:
        where = exc.field if "." in exc.field else (f"{path}.{exc.field}" if path else exc.field)
        raise ScenarioError(where, exc.reason) from None


def scenario_from_dict(data: dict) -> ScenarioConfig:
    used: list[str] = []
    cfg = _build_dataclass(ScenarioConfig, data, "", used)
    return dataclasses.replace(cfg, defaults_used=tuple(used))


def parse_scenario(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("", f"{source}: JSON parse error at line {exc.lineno}, "
                                f"column {exc.colno}: {exc.msg}") from None
    return scenario_from_dict(data)


def load_scenario(path: Union[str, Path]) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(), str(path))


def to_dict(obj) -> Any:
    """Plain JSON-ready form of a config value; round-trips through scenario_from_dict."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name))
                for f in dataclasses.fields(obj) if f.compare}
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): to_dict(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    return obj


def emit_scenario(cfg: ScenarioConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2, sort_keys=True) + "\n"


def scenario_hash(cfg: ScenarioConfig) -> str:
    canonical = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


# ----------------------------------------------------------- overrides

def parse_override(text: str) -> tuple[str, Any]:
    """'a.b.c=VALUE' -> ('a.b.c', value); VALUE is JSON when it parses, else a string."""
    if "=" not in text:
        raise ScenarioError("", f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ScenarioError("", f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def _schema_node(path: str):
    """Type annotation addressed by a dotted path, or None when not addressable."""
    tp: Any = ScenarioConfig
    for part in path.split("."):
        _, tp = _is_optional(tp)
        if dataclasses.is_dataclass(tp):
            hints = typing.get_type_hints(tp)
            names = {f.name for f in dataclasses.fields(tp) if f.compare}
            if part not in names:
                return None
            tp = hints[part]
        elif typing.get_origin(tp) is dict:
            tp = typing.get_args(tp)[1]
        else:
            return None
    return tp


def is_scalar_path(path: str) -> bool:
    tp = _schema_node(path)
    if tp is None:
        return False
    _, tp = _is_optional(tp)
    return tp in (int, float, str, bool) or (isinstance(tp, type) and issubclass(tp, Enum))


def apply_overrides(cfg: ScenarioConfig, overrides: dict[str, Any]) -> ScenarioConfig:
    if not overrides:
        return cfg
    data = to_dict(cfg)
    for path, value in overrides.items():
        if _schema_node(path) is None:
            raise ScenarioError(path, "not a field of the scenario schema")
        parts = path.split(".")
        node = data
        for i, part in enumerate(parts[:-1]):
            if node.get(part) is None:
                # materialize an absent optional block from its defaults
                sub_tp = _schema_node(".".join(parts[: i + 1]))
                _, sub_tp = _is_optional(sub_tp)
                node[part] = to_dict(sub_tp()) if dataclasses.is_dataclass(sub_tp) else {}
            node = node[part]
        node[parts[-1]] = copy.deepcopy(value)
    out = scenario_from_dict(data)
    return dataclasses.replace(out, defaults_used=cfg.defaults_used)


def with_overrides(cfg: ScenarioConfig, **dotted: Any) -> ScenarioConfig:
    """Keyword helper: with_overrides(cfg, **{"workload.concurrency": 8})."""
    return apply_overrides(cfg, dotted)
