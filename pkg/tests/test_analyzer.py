import itertools
import math
import random

import pytest

from servesim.analyzer import (
    OperationalBounds, StationDemand, amortized_demand, compute_bounds, config_search,
    required_concurrency, tandem_bounds, validate_sim, zero_load_breakdown,
)
from servesim.config import ScenarioConfig, apply_overrides
from servesim.metrics import PhaseBreakdown, RunReport
from servesim.model import MEDIUM, RunMode
from servesim.pipeline import PipelineSim, run_pipeline

from conftest import at_concurrency
from oracles import random_three_station


def fake_report(x, r_us, p99=None):
    return RunReport(throughput=x, latency_mean=r_us, latency_p50=int(r_us),
                     latency_p99=p99 if p99 is not None else int(r_us),
                     breakdown=PhaseBreakdown(inference=r_us), completions=100,
                     warm_up_discarded=0, window_us=1)


def test_single_station():
    b = tandem_bounds([StationDemand("gpu_0", 10_000, 1)])
    assert b.x_max == pytest.approx(100.0) and b.r_zero == 10_000


def test_two_station_min_capacity_rule():
    b = tandem_bounds([StationDemand("cpu_prep", 10_000, 1), StationDemand("gpu_0", 5_000, 1)])
    assert b.x_max == pytest.approx(100.0) and b.r_zero == 15_000
    assert b.bottleneck == "cpu_prep"


def test_amortized_inference_demand():
    d = amortized_demand(8, lambda b: 2000 + 500 * b)
    assert d == 750
    assert StationDemand("gpu_0", d, 1).capacity == pytest.approx(1333.33, abs=0.01)


def test_bounds_are_order_independent():
    rng = random.Random(3)
    stations = [StationDemand(f"s{i}", rng.uniform(100, 5000), rng.randint(1, 4)) for i in range(6)]
    ref = tandem_bounds(stations)
    for perm in itertools.islice(itertools.permutations(stations), 50):
        b = tandem_bounds(perm)
        assert b.x_max == ref.x_max and b.r_zero == pytest.approx(ref.r_zero)


def test_r_lower_is_nondecreasing():
    b = OperationalBounds(200.0, 20_000.0)
    vals = [b.r_lower(c) for c in range(1, 200)]
    assert vals == sorted(vals) and vals[0] == 20_000


@pytest.mark.parametrize("seed", range(4))
def test_compute_bounds_matches_hand_oracle(seed):
    cfg, x_hand, r_hand = random_three_station(seed)
    b = compute_bounds(cfg)
    assert b.x_max == pytest.approx(x_hand)
    assert b.r_zero == pytest.approx(r_hand)


def test_isolated_capacities_equal_station_capacities(vit):
    cpu = apply_overrides(vit, {"prep.placement": "cpu"})
    e2e = compute_bounds(cpu)
    prep_only = compute_bounds(cpu, RunMode.PREP_ONLY)
    inf_only = compute_bounds(cpu, RunMode.INFERENCE_ONLY)
    assert prep_only.x_max == pytest.approx(e2e.capacity("cpu_prep"))
    assert inf_only.x_max == pytest.approx(e2e.capacity("gpu_"))
    assert e2e.x_max == pytest.approx(min(prep_only.x_max, inf_only.x_max))


def test_zero_load_breakdown_matches_simulation(vit):
    for placement in ("cpu", "gpu"):
        cfg = apply_overrides(vit, {"prep.placement": placement, "workload.total_requests": 1050})
        rep = run_pipeline(cfg)
        zb = zero_load_breakdown(cfg, MEDIUM)
        assert rep.latency_mean == sum(zb.values())
        for phase, v in zb.items():
            assert getattr(rep.breakdown, phase) == v


def test_validate_serial_exact(serial_cfg):
    rep = run_pipeline(serial_cfg)
    res = validate_sim(rep, compute_bounds(serial_cfg), 1)
    assert res.passed
    assert res.check("littles_law").value == pytest.approx(0, abs=1e-9)


def test_validate_flags_violations():
    b = OperationalBounds(100.0, 10_000.0)
    assert not validate_sim(fake_report(110.0, 10_000.0), b, 1).passed
    assert not validate_sim(fake_report(50.0, 5_000.0), b, 1).passed
    res = validate_sim(fake_report(60.0, 10_000.0), b, 4)  # saturating but only 60% of X_max
    assert not res.check("saturation").passed


def test_validate_exempts_eviction_regime():
    b = OperationalBounds(100.0, 10_000.0)
    res = validate_sim(fake_report(150.0, 40_000.0), b, 6, eviction=True)
    assert res.passed and "bound exempt: eviction regime" in res.notes
    assert res.check("throughput_upper").exempt


def test_eviction_run_is_flagged(vit):
    cfg = at_concurrency(apply_overrides(vit, {"gpu_memory.capacity_bytes": 16 * 602_112}), 512, 2000)
    sim = PipelineSim(cfg)
    rep = sim.run()
    res = validate_sim(rep, compute_bounds(cfg), 512, eviction=sim.evictions > 0)
    assert sim.evictions > 0 and "bound exempt: eviction regime" in res.notes


@pytest.mark.parametrize("seed", range(3))
def test_random_pipeline_reaches_bound(seed):
    cfg, _, _ = random_three_station(seed)
    b = compute_bounds(cfg)
    c = required_concurrency(b)
    assert b.saturating(c)
    assert c == 1 or not b.saturating(c - 1)
    rep = run_pipeline(at_concurrency(cfg, c, 2000))
    res = validate_sim(rep, b, c)
    assert res.passed, res.checks


# --------------------------------------------------------------- search

def test_search_single_point(serial_cfg):
    res = config_search(serial_cfg, {"resources.cpu_prep_processes": [1]}, 1e9)
    assert res.best.params == (("resources.cpu_prep_processes", 1),)
    assert len(res.frontier) == 1


def test_search_skips_infeasible_point():
    table = {1: (100.0, 900), 2: (200.0, 2000)}

    def evaluate(cfg):
        x, p99 = table[cfg.resources.cpu_prep_processes]
        return fake_report(x, 500.0, p99)

    res = config_search(ScenarioConfig(), {"resources.cpu_prep_processes": [1, 2]}, 1000,
                        evaluate=evaluate)
    assert res.best.params == (("resources.cpu_prep_processes", 1),)
    empty = config_search(ScenarioConfig(), {"resources.cpu_prep_processes": [2]}, 1000,
                          evaluate=evaluate)
    assert not empty.feasible and len(empty.frontier) == 1


def test_search_tie_breaks():
    table = {1: (100.0, 900), 2: (100.0, 800), 3: (100.0, 800)}

    def evaluate(cfg):
        x, p99 = table[cfg.resources.cpu_prep_processes]
        return fake_report(x, 500.0, p99)

    res = config_search(ScenarioConfig(), {"resources.cpu_prep_processes": [3, 1, 2]}, 1e9,
                        evaluate=evaluate)
    assert res.best.params == (("resources.cpu_prep_processes", 2),)


def test_search_batching_beats_unbatched_baseline(vit):
    base = at_concurrency(vit, 128, 800)
    space = {"batcher.max_batch": [1, 2, 4, 8, 16, 32, 64],
             "resources.inference_instances_per_gpu": [1, 2, 3, 4]}
    res = config_search(base, space, math.inf, seed=5)
    baseline = run_pipeline(apply_overrides(base, {"batcher.max_batch": 1, "seed": 5}))
    assert res.best.throughput > baseline.throughput
    again = config_search(base, space, math.inf, seed=5)
    assert again == res
