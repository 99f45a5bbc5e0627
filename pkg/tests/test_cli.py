import csv
import json
import os
import signal
import subprocess
import sys
import time

import numpy as np
import pytest

from dannr.cli import main
from dannr.data import load_csv, save_csv
from dannr.model import load_checkpoint

SMALL_FLEET = {"n_samples": 150, "seed": 3}


def _cfg(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture
def fleet_dir(tmp_path):
    cfg = _cfg(tmp_path / "gen.json", {"fleet": SMALL_FLEET})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "fleet")]) == 0
    return tmp_path / "fleet"


def _train(tmp_path, fleet_dir, mode, out, extra=None, target="plant-1.csv"):
    doc = {"source": str(fleet_dir / "plant-0.csv"), "target": str(fleet_dir / target),
           "hidden": [6], "train": {"epochs": 4, "batch_size": 32, **(extra or {})}}
    cfg = _cfg(tmp_path / f"{out}.json", doc)
    return main(["train", "--config", cfg, "--mode", mode, "--out", str(tmp_path / out)])


def test_generate_writes_one_csv_per_plant(fleet_dir, tmp_path):
    files = sorted(p.name for p in fleet_dir.glob("plant-*.csv"))
    assert files == [f"plant-{i}.csv" for i in range(5)]
    assert json.loads((fleet_dir / "resolved_config.json").read_text())["fleet"]["seed"] == 3
    cfg = _cfg(tmp_path / "g2.json", {"fleet": SMALL_FLEET})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    for f in files:
        assert (fleet_dir / f).read_bytes() == (tmp_path / "again" / f).read_bytes()


def test_generate_single_plant_is_a_config_error(tmp_path):
    cfg = _cfg(tmp_path / "g.json", {"fleet": {"n_plants": 1, "plants": [{}]}})
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "o")]) != 0


def test_generate_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["generate", "--out", str(blocker / "sub")]) != 0


def test_train_writes_checkpoint_trace_and_config(tmp_path, fleet_dir):
    assert _train(tmp_path, fleet_dir, "dannr", "run") == 0
    out = tmp_path / "run"
    assert {p.name for p in out.iterdir()} == {"checkpoint.json", "trace.csv", "resolved_config.json"}
    rows = list(csv.reader(open(out / "trace.csv")))
    assert len(rows) - 1 == 4
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["mode"] == "dannr" and resolved["train"]["epochs"] == 4


def test_baseline_and_lambda_zero_dannr_share_regression_weights(tmp_path, fleet_dir):
    zero = {"lambda_schedule": {"kind": "constant", "start": 0.0, "end": 0.0}}
    assert _train(tmp_path, fleet_dir, "baseline", "b", zero) == 0
    assert _train(tmp_path, fleet_dir, "dannr", "d", zero) == 0
    b, d = load_checkpoint(tmp_path / "b/checkpoint.json"), load_checkpoint(tmp_path / "d/checkpoint.json")
    for k, v in b.regression_parameters().items():
        np.testing.assert_array_equal(d.parameters()[k], v)


def test_missing_dataset_names_the_path(tmp_path, caplog):
    cfg = _cfg(tmp_path / "t.json", {"source": str(tmp_path / "absent.csv")})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) != 0
    assert "absent.csv" in caplog.text


def test_lambda_schedule_flag_overrides_config(tmp_path, fleet_dir):
    doc = {"source": str(fleet_dir / "plant-0.csv"), "target": str(fleet_dir / "plant-1.csv"),
           "hidden": [4], "train": {"epochs": 3}}
    cfg = _cfg(tmp_path / "t.json", doc)
    assert main(["train", "--config", cfg, "--lambda-schedule", "dann_ramp", "--seed", "9",
                 "--out", str(tmp_path / "o")]) == 0
    resolved = json.loads((tmp_path / "o/resolved_config.json").read_text())
    assert resolved["train"]["lambda_schedule"]["kind"] == "dann_ramp"
    assert resolved["train"]["seed"] == 9
    lams = [float(r["lambda"]) for r in csv.DictReader(open(tmp_path / "o/trace.csv"))]
    assert lams[0] == 0.0 and lams[-1] > 0.99


def test_stripped_target_labels_give_identical_checkpoint(tmp_path, fleet_dir):
    stripped = load_csv(fleet_dir / "plant-1.csv").without_labels()
    save_csv(stripped, fleet_dir / "plant-1-unlabeled.csv")
    assert _train(tmp_path, fleet_dir, "dannr", "with") == 0
    assert _train(tmp_path, fleet_dir, "dannr", "without", target="plant-1-unlabeled.csv") == 0
    assert (tmp_path / "with/checkpoint.json").read_bytes() == (tmp_path / "without/checkpoint.json").read_bytes()


@pytest.fixture
def trained(tmp_path, fleet_dir):
    assert _train(tmp_path, fleet_dir, "baseline", "b") == 0
    assert _train(tmp_path, fleet_dir, "dannr", "d") == 0
    return tmp_path


def _eval_cfg(tmp_path, fleet_dir, ckpts=None, source="plant-0.csv"):
    return _cfg(tmp_path / "ev.json", {
        "source": str(fleet_dir / source), "target": str(fleet_dir / "plant-1.csv"),
        "hidden": [6],
        "checkpoints": ckpts or {"baseline": str(tmp_path / "b/checkpoint.json"),
                                 "dannr": str(tmp_path / "d/checkpoint.json")}})


def test_eval_report_and_plot_data(trained, fleet_dir):
    tmp_path = trained
    assert main(["eval", "--config", _eval_cfg(tmp_path, fleet_dir), "--out", str(tmp_path / "ev")]) == 0
    rows = list(csv.DictReader(open(tmp_path / "ev/report.csv")))
    assert len(rows) == 1
    header = list(rows[0])
    assert header[:7] == ["target", "source", "source_mse_no_tl", "source_mse_tl", "target_mse_no_tl",
                          "target_mse_tl", "transfer_ratio"]
    assert "config_digest" in header
    r = rows[0]
    assert float(r["transfer_ratio"]) == float(r["target_mse_no_tl"]) / float(r["target_mse_tl"])
    plot = list(csv.reader(open(tmp_path / "ev/plot_data.csv")))
    assert plot[0] == ["index", "ground_truth", "baseline_prediction", "dannr_prediction"]
    assert len(plot) - 1 == 150
    assert (tmp_path / "ev/report.json").is_file() and (tmp_path / "ev/resolved_config.json").is_file()


def test_eval_source_mse_matches_final_trace(trained, fleet_dir):
    tmp_path = trained
    assert main(["eval", "--config", _eval_cfg(tmp_path, fleet_dir), "--out", str(tmp_path / "ev")]) == 0
    report = json.loads((tmp_path / "ev/report.json").read_text())["reports"][0]
    for mode, key in (("b", "source_mse_no_tl"), ("d", "source_mse_tl")):
        rows = list(csv.DictReader(open(tmp_path / mode / "trace.csv")))
        assert abs(report[key] - float(rows[-1]["source_regression_loss"])) <= 1e-9


def test_eval_schema_mismatch_fails(trained, fleet_dir, tmp_path):
    odd = tmp_path / "odd.csv"
    odd.write_text("a,b,active_power\n1,2,3\n")
    cfg = _cfg(tmp_path / "ev.json", {
        "source": str(odd), "target": str(odd), "features": ["a", "b"],
        "checkpoints": {"baseline": str(tmp_path / "b/checkpoint.json"),
                        "dannr": str(tmp_path / "d/checkpoint.json")}})
    assert main(["eval", "--config", cfg, "--out", str(tmp_path / "ev")]) != 0


BENCH = {"fleet": {"n_samples": 60, "seed": 2}, "hidden": [4],
         "train": {"epochs": 2, "batch_size": 32}, "seeds": [0, 1, 2]}


def test_bench_cell_count_and_aggregate(tmp_path):
    cfg = _cfg(tmp_path / "b.json", BENCH)
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "bench")]) == 0
    out = tmp_path / "bench"
    assert len(list((out / "cells").glob("*/report.json"))) == 30
    assert len(json.loads((out / "reports.json").read_text())["reports"]) == 30
    agg = list(csv.DictReader(open(out / "aggregate.csv")))
    avg_rows = [r for r in agg if r["seed"] == "average"]
    assert sorted(r["mode"] for r in avg_rows) == ["one_to_one", "rest_to_one"]
    for r in avg_rows:
        per_seed = [float(x["transfer_ratio"]) for x in agg if x["mode"] == r["mode"] and x["seed"] != "average"]
        assert float(r["transfer_ratio"]) == pytest.approx(np.mean(per_seed), abs=1e-15)
    assert (out / "resolved_config.json").is_file()


def test_bench_with_parallel_jobs_matches_sequential(tmp_path):
    doc = {**BENCH, "seeds": [0], "modes": ["one_to_one"]}
    cfg = _cfg(tmp_path / "b.json", doc)
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "seq")]) == 0
    assert main(["bench", "--config", cfg, "--jobs", "2", "--out", str(tmp_path / "par")]) == 0
    assert (tmp_path / "seq/reports.csv").read_bytes() == (tmp_path / "par/reports.csv").read_bytes()


def test_bench_failing_cells_give_nonzero_exit(tmp_path):
    doc = {**BENCH, "seeds": [0], "modes": ["one_to_one"], "train": {"epochs": 2, "mu": 1e200}}
    cfg = _cfg(tmp_path / "b.json", doc)
    with np.errstate(all="ignore"):
        assert main(["bench", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


def test_bench_resumes_after_kill(tmp_path):
    doc = {**BENCH, "train": {"epochs": 40, "batch_size": 32}, "fleet": {"n_samples": 300, "seed": 2}}
    cfg = _cfg(tmp_path / "b.json", doc)
    out = tmp_path / "bench"
    cmd = [sys.executable, "-m", "dannr.cli", "bench", "--config", cfg, "--out", str(out)]
    env = {**os.environ, "DANNR_LOG": "error"}
    proc = subprocess.Popen(cmd, env=env)
    deadline = time.time() + 120
    while time.time() < deadline and len(list(out.glob("cells/*/report.json"))) < 3:
        time.sleep(0.05)
    proc.send_signal(signal.SIGKILL)
    proc.wait()
    done = {p: p.stat().st_mtime_ns for p in out.glob("cells/*/report.json")}
    assert 3 <= len(done) < 30
    assert subprocess.run(cmd, env=env).returncode == 0
    assert len(list(out.glob("cells/*/report.json"))) == 30
    for p, mtime in done.items():
        assert p.stat().st_mtime_ns == mtime

    fresh = tmp_path / "fresh"
    assert subprocess.run(cmd[:-1] + [str(fresh)], env=env).returncode == 0
    assert (fresh / "reports.csv").read_bytes() == (out / "reports.csv").read_bytes()
