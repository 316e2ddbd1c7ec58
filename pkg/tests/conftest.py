from __future__ import annotations

import sys

import pytest

from servesim.calibrate import packaged_scenario
from servesim.config import apply_overrides, scenario_from_dict


def serial_dict(**workload) -> dict:
    """C=1 path: prep 2000, transfer in 100, inference 3000, transfer out 50 (us)."""
    wl = {"image": "medium", "concurrency": 1, "total_requests": 1500}
    wl.update(workload)
    return {
        "name": "serial",
        "workload": wl,
        "resources": {"cpu_prep_processes": 1, "link_latency_us": 0,
                      "link_bandwidth_bytes_per_us": 3.0},
        "prep": {"placement": "cpu",
                 "cpu": {"fixed_us": 2000.0, "per_byte_ns": 0.0, "per_pixel_ns": 0.0}},
        # 5x5x3x4 = 300 bytes in (100 us at 3 B/us), 150 bytes out (50 us)
        "model": {"name": "toy", "input_width": 5, "input_height": 5, "alpha_us": 3000.0,
                  "beta_us": 0.0001, "output_bytes": 150},
        "batcher": {"max_batch": 1, "max_delay_us": 0},
        "gpu_memory": {"capacity_bytes": 1_000_000},
    }


@pytest.fixture
def serial_cfg():
    return scenario_from_dict(serial_dict())


@pytest.fixture(scope="session")
def vit():
    return packaged_scenario("vit")


@pytest.fixture(scope="session")
def face():
    return packaged_scenario("face_pipeline")


def at_concurrency(cfg, c: int, completions: int = 3000):
    """Override the concurrency keeping `completions` measured requests after warm-up."""
    warm = max(1000, 5 * c)
    return apply_overrides(cfg, {"workload.concurrency": c,
                                 "workload.total_requests": warm + completions})


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
