"""Regenerate the scenario files shipped in src/servesim/scenarios/.

Run from the repository root after changing a calibration:

    python tools/make_scenarios.py
"""

from __future__ import annotations

from pathlib import Path

from servesim.calibrate import calibrated_face_pipeline, calibrated_vit
from servesim.config import apply_overrides, emit_scenario, scenario_from_dict

OUT = Path(__file__).resolve().parent.parent / "src" / "servesim" / "scenarios"


def main() -> None:
    vit = calibrated_vit()
    scenarios = {
        "vit": vit,
        # a larger host feeding up to four GPUs
        "vit_multi_gpu": apply_overrides(vit, {
            "name": "vit_multi_gpu",
            "resources.cpu_prep_processes": 32,
            "workload.concurrency": 512,
            "workload.total_requests": 6000,
        }),
        # CPU-bound node with noisy service times, for batching-policy comparisons
        "vit_batching": apply_overrides(vit, {
            "name": "vit_batching",
            "prep.placement": "cpu",
            "resources.cpu_prep_processes": 3,
            "batcher.max_batch": 8,
            "jitter.prep": 0.2,
            "jitter.inference": 0.1,
            "workload.concurrency": 24,
            "workload.total_requests": 11000,
        }),
        # small model behind a slow link: decoded tensors cost more to ship than JPEGs
        "tinyvit": apply_overrides(vit, {
            "name": "tinyvit",
            "model.name": "tinyvit",
            "model.alpha_us": 500.0,
            "model.beta_us": 100.0,
            "resources.link_bandwidth_bytes_per_us": 1000.0,
            "gpu_memory.enabled": False,
            "workload.concurrency": 256,
            "workload.total_requests": 6000,
        }),
        "serial": scenario_from_dict({
            "name": "serial",
            "workload": {"image": "medium", "concurrency": 1, "total_requests": 3000},
            "resources": {"cpu_prep_processes": 1, "link_latency_us": 0,
                          "link_bandwidth_bytes_per_us": 3.0},
            "prep": {"placement": "cpu",
                     "cpu": {"fixed_us": 2000.0, "per_byte_ns": 0.0, "per_pixel_ns": 0.0}},
            "model": {"name": "toy", "input_width": 5, "input_height": 5, "alpha_us": 3000.0,
                      "beta_us": 0.0001, "output_bytes": 150},
            "batcher": {"max_batch": 1, "max_delay_us": 0},
            "gpu_memory": {"capacity_bytes": 1000000},
        }),
        "face_pipeline": calibrated_face_pipeline(),
    }
    OUT.mkdir(parents=True, exist_ok=True)
    for name, cfg in scenarios.items():
        (OUT / f"{name}.json").write_text(emit_scenario(cfg))
        print(f"wrote {name}.json")


if __name__ == "__main__":
    main()
