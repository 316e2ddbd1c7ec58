import json
import subprocess
import sys

import pytest

from servesim.cli import builtin_scenarios, main, sweep_workers
from servesim.config import emit_scenario, load_scenario, scenario_from_dict
from servesim.report import CSV_COLUMNS, read_csv

from conftest import serial_dict


@pytest.fixture
def serial_file(tmp_path):
    path = tmp_path / "serial.json"
    path.write_text(emit_scenario(scenario_from_dict(serial_dict())))
    return path


def test_builtin_scenarios_present():
    assert {"vit", "vit_multi_gpu", "vit_batching", "tinyvit", "serial",
            "face_pipeline"} <= set(builtin_scenarios())


def test_run_writes_csv_and_summary(serial_file, tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["run", "--scenario", str(serial_file), "--out", str(out)]) == 0
    rows = read_csv(out.read_text())
    assert list(rows[0]) == list(CSV_COLUMNS)
    assert rows[0]["lat_mean_us"] == "5150.00" and rows[0]["seed"] == "0"
    text = capsys.readouterr().out
    assert "throughput" in text and "194.17" in text and "p99" in text


def test_run_same_seed_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    args = ["run", "--scenario", "vit_batching", "--override", "workload.total_requests=1500",
            "--seed", "3"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_override_is_echoed(capsys, tmp_path):
    out = tmp_path / "o.csv"
    assert main(["run", "--scenario", "vit", "--override", "workload.concurrency=256",
                 "--override", "workload.total_requests=3000", "--out", str(out)]) == 0
    assert "concurrency                256" in capsys.readouterr().out


def test_trace_lines(serial_file, tmp_path):
    trace = tmp_path / "t.jsonl"
    assert main(["run", "--scenario", str(serial_file), "--trace", str(trace)]) == 0
    lines = [json.loads(l) for l in trace.read_text().splitlines()]
    assert len(lines) == 1500
    first = lines[0]
    assert set(first) == {"id", "class", "issued_us", "completed_us", "phases"}
    assert first["completed_us"] - first["issued_us"] == 5150
    assert [p[0] for p in first["phases"]] == ["prep_queue", "prep", "batch_queue", "transfer_in",
                                               "inference", "transfer_out"]


def test_bad_scenario_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"batcher": {"max_batch": 0}}')
    assert main(["run", "--scenario", str(bad)]) == 2
    assert "batcher.max_batch" in capsys.readouterr().err
    assert main(["run", "--scenario", "no-such-scenario"]) == 2


def test_sweep_rows_in_input_order(serial_file, tmp_path, monkeypatch):
    monkeypatch.setenv("SERVESIM_THREADS", "2")
    out = tmp_path / "s.csv"
    assert main(["sweep", "--scenario", str(serial_file), "--param", "model.alpha_us",
                 "--values", "6000,1000,3000", "--out", str(out)]) == 0
    rows = read_csv(out.read_text())
    assert [r["value"] for r in rows] == ["6000", "1000", "3000"]
    assert [int(r["lat_p50_us"]) for r in rows] == [8150, 3150, 5150]
    assert len({r["seed"] for r in rows}) == 1
    assert len({r["scenario_hash"] for r in rows}) == 3


def test_sweep_rejects_bad_param(serial_file, capsys):
    assert main(["sweep", "--scenario", str(serial_file), "--param", "workload",
                 "--values", "1,2"]) == 2
    assert main(["sweep", "--scenario", str(serial_file), "--param", "batcher.max_batch",
                 "--values", "1,0"]) == 2


def test_sweep_figure(serial_file, tmp_path):
    fig = tmp_path / "f.png"
    assert main(["sweep", "--scenario", str(serial_file), "--param", "model.alpha_us",
                 "--values", "1000,2000", "--out", str(tmp_path / "s.csv"),
                 "--figure", str(fig)]) == 0
    assert fig.read_bytes()[:4] == b"\x89PNG"


def test_sweep_workers(monkeypatch):
    monkeypatch.setenv("SERVESIM_THREADS", "3")
    assert sweep_workers(10) == 3 and sweep_workers(2) == 2
    monkeypatch.delenv("SERVESIM_THREADS")
    assert sweep_workers(1) == 1


def test_analyze_serial_passes(serial_file, capsys):
    assert main(["analyze", "--scenario", str(serial_file)]) == 0
    out = capsys.readouterr().out
    assert "R_zero 5.150 ms" in out and "simulated X 194.17" in out
    assert out.strip().endswith("PASS")


def test_analyze_eviction_note(capsys):
    assert main(["analyze", "--scenario", "vit", "--override", "workload.concurrency=1024",
                 "--override", "workload.total_requests=7000",
                 "--override", "gpu_memory.capacity_bytes=12000000"]) == 0
    assert "bound exempt: eviction regime" in capsys.readouterr().out


def test_analyze_rejects_two_stage(capsys):
    assert main(["analyze", "--scenario", "face_pipeline"]) == 2


def test_calibrate_writes_fragment(tmp_path, capsys):
    out = tmp_path / "frag.json"
    assert main(["calibrate", "zero_load_shares", "--out", str(out)]) == 0
    frag = json.loads(out.read_text())
    assert frag["target_set"] == "zero_load_shares" and "prep.cpu" in frag["values"]
    assert "achieved" in capsys.readouterr().out
    # the fragment applies on top of a scenario
    res = tmp_path / "r.csv"
    assert main(["run", "--scenario", "vit", "--fragment", str(out), "--out", str(res)]) == 0


def test_calibrate_unknown_set(capsys):
    assert main(["calibrate", "--target-set", "bogus"]) == 2
    err = capsys.readouterr().err
    assert "broker_set" in err and "zero_load_shares" in err


def test_two_stage_sweep_over_kind(tmp_path):
    out = tmp_path / "k.csv"
    assert main(["sweep", "--scenario", "face_pipeline", "--param", "interconnect.kind",
                 "--values", "disk,memory,fused", "--override", "workload.total_requests=1600",
                 "--out", str(out)]) == 0
    rows = read_csv(out.read_text())
    assert [r["value"] for r in rows] == ["disk", "memory", "fused"]
    assert float(rows[0]["share_broker"]) > float(rows[1]["share_broker"]) > 0
    assert float(rows[2]["share_broker"]) == 0


def test_console_script(tmp_path, serial_file):
    out = tmp_path / "c.csv"
    proc = subprocess.run([sys.executable, "-m", "servesim.cli", "run", "--scenario",
                           str(serial_file), "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert load_scenario(serial_file).name == "serial"
