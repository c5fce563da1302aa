import json

import pytest
import yaml

from qnetstack.cli import main
from qnetstack.config import ConfigError, RunConfig, load_config


def run(tmp_path, *extra, name="r"):
    out = tmp_path / name
    code = main(["run", "--experiment", "tomography", "--shots-per-setting", "2", "--seed", "3",
                 "--output-dir", str(out), *extra])
    return code, out


def test_run_writes_manifest_and_outcomes(tmp_path):
    code, out = run(tmp_path)
    assert code == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "ok" and man["seed"] == 3 and man["n_rows"] == 72
    assert set(man["files"]) == {"outcomes.jsonl", "trace.jsonl"}
    rows = [json.loads(x) for x in (out / "outcomes.jsonl").read_text().splitlines()]
    assert len(rows) == 72 and rows[0]["schema"] == 1


def test_no_trace_flag(tmp_path):
    code, out = run(tmp_path, "--no-trace")
    assert code == 0
    assert not (out / "trace.jsonl").exists()


def test_same_seed_byte_identical(tmp_path):
    _, a = run(tmp_path, "--no-trace", name="a")
    _, b = run(tmp_path, "--no-trace", name="b")
    assert (a / "outcomes.jsonl").read_bytes() == (b / "outcomes.jsonl").read_bytes()


def test_unreachable_fidelity_rejected(tmp_path, capsys):
    code, out = run(tmp_path, "--min-fidelity", "0.99")
    assert code == 2
    assert not (out / "outcomes.jsonl").exists()


def test_analyze_and_report(tmp_path, capsys):
    _, out = run(tmp_path, "--no-trace")
    assert main(["analyze", str(out), "--corrections", "readout", "--n-boot", "5"]) == 0
    res = json.loads((out / "analysis-readout" / "results.json").read_text())
    assert 0 <= res["fidelity"] <= 1 and res["corrections"] == "readout"
    assert (out / "analysis-readout" / "tomography_rho.csv").exists()
    assert (out / "analysis-readout" / "latency_breakdown.csv").exists()
    rep = tmp_path / "rep"
    assert main(["report", str(out), "--out", str(rep), "--n-boot", "5"]) == 0
    for f in ("delivered_vs_time.csv", "fidelity_vs_requested.csv", "latency_breakdown.csv",
              "rsp_bloch.csv"):
        assert (rep / f).exists()


def test_analyze_missing_dir(tmp_path):
    assert main(["analyze", str(tmp_path / "nope")]) == 2


def test_gen_schedule(tmp_path):
    path = tmp_path / "s.yaml"
    assert main(["gen-schedule", "--class", "tomo:0.8", "--class", "any", "--bin-ms", "10",
                 "--repeat", "2", "--out", str(path)]) == 0
    sched = yaml.safe_load(path.read_text())["schedule"]
    cfg = RunConfig.from_dict({"schedule": sched})
    cfg.validate()
    assert len(sched["assignment"]) == 4


def test_validate_config(tmp_path, capsys):
    good = tmp_path / "good.yaml"
    good.write_text(yaml.safe_dump({"seed": 4, "experiment": "rsp", "shots_per_setting": 3}))
    assert main(["validate-config", str(good)]) == 0
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump({"seed": 4, "colour": "blue"}))
    assert main(["validate-config", str(bad)]) == 2
    assert "unknown" in capsys.readouterr().err


def test_config_round_trip(tmp_path):
    cfg = RunConfig(seed=9, experiment="fidelity_sweep", fidelities=(0.6, 0.7))
    path = tmp_path / "c.yaml"
    path.write_text(yaml.safe_dump(cfg.to_dict()))
    assert load_config(path) == cfg
    with pytest.raises(ConfigError):
        RunConfig(experiment="custom").validate()


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("QNETSTACK_OUTPUT_ROOT", str(tmp_path / "root"))
    assert RunConfig(seed=2, experiment="rsp").resolved_output_dir() == tmp_path / "root" / "rsp-seed2"


def test_custom_program_run(tmp_path):
    prog = tmp_path / "p.txt"
    prog.write_text("reps 3\nsettings +Z:+Z\n"
                    "client CREATE_ENT type=K fid=0.7 ; ROTATE_BASIS $client ; MEASURE ; STORE bit\n"
                    "server RECV_ENT type=K fid=0.7 ; ROTATE_BASIS $server ; MEASURE ; STORE bit\n")
    out = tmp_path / "c"
    assert main(["run", "--experiment", "custom", "--program", str(prog), "--no-trace",
                 "--output-dir", str(out)]) == 0
    assert json.loads((out / "manifest.json").read_text())["n_rows"] == 3
