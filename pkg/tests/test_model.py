import math

import pytest

from servesim.model import (
    LARGE, MEDIUM, SMALL, BatcherConfig, DispatchNow, ImageClass, InvalidField, LinkModel,
    ModelProfile, PrepPlacement, StageProfile, WaitUntil, batcher_decide,
    inference_batch_time, prep_service_time, transfer_time,
)


def test_canonical_image_classes():
    assert (SMALL.compressed_bytes, SMALL.width, SMALL.height) == (4 * 1024, 60, 70)
    assert (MEDIUM.compressed_bytes, MEDIUM.width, MEDIUM.height) == (121 * 1024, 500, 375)
    assert (LARGE.compressed_bytes, LARGE.width, LARGE.height) == (9528 * 1024, 3564, 2880)


def test_image_class_rejects_bad_fields():
    with pytest.raises(InvalidField):
        ImageClass("x", 0, 10, 10)
    with pytest.raises(InvalidField):
        ImageClass("x", 10, 0, 10)


def test_decoded_tensor_size_and_ratio():
    m = ModelProfile(input_width=224, input_height=224)
    assert m.bytes_per_input == 224 * 224 * 3 * 4 == 602_112
    assert m.bytes_per_input / MEDIUM.compressed_bytes == pytest.approx(4.86, abs=0.005)


def test_model_profile_validation():
    with pytest.raises(InvalidField):
        ModelProfile(alpha_us=-1.0)
    with pytest.raises(InvalidField):
        ModelProfile(beta_us=0.0)


def test_prep_zero_coefficients_gives_fixed():
    prof = StageProfile(fixed_us=1234.0, per_byte_ns=0.0, per_pixel_ns=0.0)
    for img in (SMALL, MEDIUM, LARGE):
        assert prep_service_time(prof, PrepPlacement.CPU, [img]) == 1234


def test_prep_cpu_and_gpu_cost_structure():
    prof = StageProfile(fixed_us=1000.0, per_byte_ns=2.0, per_pixel_ns=3.0)
    item = (MEDIUM.compressed_bytes * 2.0 + MEDIUM.width * MEDIUM.height * 3.0) / 1000
    assert prep_service_time(prof, PrepPlacement.CPU, [MEDIUM]) == math.floor(1000 + item + 0.5)
    # one launch cost for the whole GPU batch
    assert prep_service_time(prof, PrepPlacement.GPU, [MEDIUM] * 4) == math.floor(1000 + 4 * item + 0.5)


def test_prep_rejects_empty_and_cpu_batches():
    prof = StageProfile()
    with pytest.raises(ValueError):
        prep_service_time(prof, PrepPlacement.GPU, [])
    with pytest.raises(ValueError):
        prep_service_time(prof, PrepPlacement.CPU, [SMALL, SMALL])


def test_transfer_time():
    link = LinkModel(latency_us=10, bandwidth_bytes_per_us=12000.0)
    assert transfer_time(0, link) == 10
    # ceil(602112 / 12000) = 51
    assert transfer_time(602_112, link) == 10 + 51
    assert transfer_time(12000, link) == 11
    assert transfer_time(12001, link) == 12
    with pytest.raises(ValueError):
        transfer_time(-1, link)


def test_inference_batch_time():
    m = ModelProfile(alpha_us=2000.0, beta_us=500.0)
    assert inference_batch_time(m, 1) == 2500
    assert inference_batch_time(m, 8) == 6000
    assert inference_batch_time(m, 8) / 8 == 750
    flat = ModelProfile(alpha_us=0.0, beta_us=400.0)
    assert {inference_batch_time(flat, b) / b for b in range(1, 33)} == {400.0}
    with pytest.raises(ValueError):
        inference_batch_time(m, 0)


def test_batcher_full_batch():
    cfg = BatcherConfig(max_batch=8, max_delay_us=1000)
    assert batcher_decide([0] * 8, cfg, 0) == DispatchNow(8)
    assert batcher_decide(list(range(12)), cfg, 20) == DispatchNow(8)


def test_batcher_timeout():
    cfg = BatcherConfig(max_batch=8, max_delay_us=1000)
    assert batcher_decide([500, 600, 700], cfg, 1500) == DispatchNow(3)


def test_batcher_waits_until_deadline():
    cfg = BatcherConfig(max_batch=8, max_delay_us=1000)
    now = 5000
    oldest = now - (1000 - 100)
    assert batcher_decide([oldest, now - 10, now], cfg, now) == WaitUntil(now + 100)


def test_batcher_empty_and_fixed_mode():
    dyn = BatcherConfig(max_batch=4, max_delay_us=10)
    assert batcher_decide([], dyn, 0) == WaitUntil(None)
    fixed = BatcherConfig(max_batch=4, max_delay_us=10, mode="fixed")
    assert batcher_decide([0, 1, 2], fixed, 10_000) == WaitUntil(None)
    assert batcher_decide([0, 1, 2, 3], fixed, 3) == DispatchNow(4)


def test_batcher_config_validation():
    with pytest.raises(InvalidField):
        BatcherConfig(max_batch=0)
    with pytest.raises(InvalidField):
        BatcherConfig(max_delay_us=-1)
    with pytest.raises(InvalidField):
        BatcherConfig(mode="greedy")
