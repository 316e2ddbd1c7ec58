"""Cost models for the single-DNN serving path."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

from .engine import round_us


class InvalidField(ValueError):
    """A value violates a domain invariant; `field` names the offending attribute."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.reason = message


@dataclass(frozen=True)
class ImageClass:
    name: str
    compressed_bytes: int
    width: int
    height: int

    def __post_init__(self):
        for name in ("compressed_bytes", "width", "height"):
            if getattr(self, name) <= 0:
                raise InvalidField(name, "must be > 0")

    @property
    def pixels(self) -> int:
        return self.width * self.height


KIB = 1024

# ImageNet samples used for the zero-load breakdowns.
SMALL = ImageClass("small", 4 * KIB, 60, 70)
MEDIUM = ImageClass("medium", 121 * KIB, 500, 375)
LARGE = ImageClass("large", 9528 * KIB, 3564, 2880)
CANONICAL_IMAGES = {c.name: c for c in (SMALL, MEDIUM, LARGE)}


@dataclass(frozen=True)
class ModelProfile:
    name: str = "vit-base"
    input_width: int = 224
    input_height: int = 224
    alpha_us: float = 8000.0
    beta_us: float = 2000.0
    output_bytes: int = 4000

    def __post_init__(self):
        if self.alpha_us < 0:
            raise InvalidField("alpha_us", "must be >= 0")
        if self.beta_us <= 0:
            raise InvalidField("beta_us", "must be > 0")

    @property
    def bytes_per_input(self) -> int:
        # float32 RGB tensor
        return self.input_width * self.input_height * 3 * 4


@dataclass(frozen=True)
class StageProfile:
    fixed_us: float = 0.0
    per_byte_ns: float = 0.0
    per_pixel_ns: float = 0.0

    def __post_init__(self):
        for name in ("fixed_us", "per_byte_ns", "per_pixel_ns"):
            if getattr(self, name) < 0:
                raise InvalidField(name, "must be >= 0")

    def item_us(self, image: ImageClass) -> float:
        return (self.per_byte_ns * image.compressed_bytes + self.per_pixel_ns * image.pixels) / 1000.0


@dataclass(frozen=True)
class LinkModel:
    latency_us: int = 10
    bandwidth_bytes_per_us: float = 12000.0

    def __post_init__(self):
        if self.latency_us < 0:
            raise InvalidField("latency_us", "must be >= 0")
        if self.bandwidth_bytes_per_us <= 0:
            raise InvalidField("bandwidth_bytes_per_us", "must be > 0")


class PrepPlacement(str, Enum):
    CPU = "cpu"
    GPU = "gpu"


class RunMode(str, Enum):
    END_TO_END = "end_to_end"
    PREP_ONLY = "prep_only"
    INFERENCE_ONLY = "inference_only"


def prep_service_time(profile: StageProfile, placement: PrepPlacement,
                      batch: Sequence[ImageClass]) -> int:
    """Preprocessing time for one invocation.

    CPU processes take one image each; a GPU launch pays the fixed cost once
    for the whole batch.
    """
    if not batch:
        raise ValueError("empty preprocessing batch")
    if placement is PrepPlacement.CPU and len(batch) != 1:
        raise ValueError("CPU preprocessing handles exactly one image per invocation")
    return round_us(profile.fixed_us + sum(profile.item_us(img) for img in batch))


def transfer_time(nbytes: int, link: LinkModel) -> int:
    if nbytes < 0:
        raise ValueError("negative transfer size")
    return link.latency_us + math.ceil(nbytes / link.bandwidth_bytes_per_us)


def inference_batch_time(model: ModelProfile, batch_size: int) -> int:
    if batch_size < 1:
        raise ValueError("inference batch must hold at least one request")
    return round_us(model.alpha_us + model.beta_us * batch_size)


@dataclass(frozen=True)
class BatcherConfig:
    max_batch: int = 32
    max_delay_us: int = 2000
    # "fixed" only ever dispatches full batches
    mode: str = "dynamic"

    def __post_init__(self):
        if self.max_batch < 1:
            raise InvalidField("max_batch", "must be >= 1")
        if self.max_delay_us < 0:
            raise InvalidField("max_delay_us", "must be >= 0")
        if self.mode not in ("dynamic", "fixed"):
            raise InvalidField("mode", f"must be 'dynamic' or 'fixed', got {self.mode!r}")


@dataclass(frozen=True)
class DispatchNow:
    count: int


@dataclass(frozen=True)
class WaitUntil:
    time: int | None  # None: wait for more arrivals, no deadline


Decision = Union[DispatchNow, WaitUntil]


def batcher_decide(enqueue_times: Sequence[int], config: BatcherConfig, now: int) -> Decision:
    """Decide whether the head of a FIFO batch queue goes out now.

    `enqueue_times` is oldest first. Returns how many of the oldest requests to
    dispatch, or when to look again.
    """
    n = len(enqueue_times)
    if n == 0:
        return WaitUntil(None)
    if n >= config.max_batch:
        return DispatchNow(config.max_batch)
    if config.mode == "fixed":
        return WaitUntil(None)
    deadline = enqueue_times[0] + config.max_delay_us
    if now >= deadline:
        return DispatchNow(n)
    return WaitUntil(deadline)
