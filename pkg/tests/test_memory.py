import pytest

from servesim.memory import GpuMemory, ResidencyError
from servesim.model import LinkModel

MB = 1_000_000


def test_admit_without_eviction():
    mem = GpuMemory(10 * MB)
    mem.admit("a", 4 * MB)
    res = mem.admit("b", 2 * MB)
    assert res.resident_without_eviction
    assert mem.used == 6 * MB


def test_admit_evicts_oldest_waiting():
    mem = GpuMemory(10 * MB)
    # 9.5 MB resident: nine 1 MB waiting inputs plus 0.5 MB pinned in a running batch
    mem.admit("run", MB // 2)
    mem.pin("run")
    for i in range(9):
        mem.admit(i, MB)
    res = mem.admit("new", MB)
    assert res.evicted == [0]
    assert mem.is_evicted(0) and not mem.is_evicted(1)
    assert mem.evictions == 1 and mem.used == 10 * MB - MB // 2


def test_running_inputs_are_never_evicted():
    mem = GpuMemory(3 * MB)
    for k in ("a", "b", "c"):
        mem.admit(k, MB)
        mem.pin(k)
    res = mem.admit("d", MB)
    assert res.evicted == []
    assert not any(mem.is_evicted(k) for k in "abc")


def test_admit_larger_than_capacity_fails():
    with pytest.raises(ResidencyError):
        GpuMemory(MB).admit("big", MB + 1)


def test_reload_cost_matches_transfer_time():
    link = LinkModel(latency_us=10, bandwidth_bytes_per_us=12000.0)
    mem = GpuMemory(602_112)
    mem.admit("old", 602_112)
    mem.admit("new", 602_112)
    assert mem.is_evicted("old")
    mem.pin("new")
    mem.release(602_112)
    assert mem.reload_cost("old", link) == 61
    assert not mem.is_evicted("old")
    assert mem.reloads == 1 and mem.reload_time_us == 61


def test_reload_of_resident_input_fails():
    mem = GpuMemory(10 * MB)
    mem.admit("a", MB)
    with pytest.raises(ResidencyError):
        mem.reload_cost("a", LinkModel(10, 1000.0))


def test_no_evictions_under_capacity():
    mem = GpuMemory(100 * MB)
    for i in range(50):
        mem.admit(i, MB)
        if i % 2:
            mem.pin(i)
    assert mem.evictions == 0 and mem.reload_time_us == 0
