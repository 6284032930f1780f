import csv
import json
import subprocess
import sys

import pytest
import yaml

from poisonbench.cli import main
from poisonbench.config import apply_overrides, from_dict, load_config
from poisonbench.core import ConfigError
from poisonbench.experiment import METRIC_COLUMNS, expand_grid, run_experiment

SMALL = {
    "dataset": {"kind": "synth", "num_classes": 4, "dim": 5, "per_class": 30, "test_per_class": 10},
    "partition": {"kind": "iid"},
    "attack": {"kind": "static_flip"},
    "aggregator": {"kind": "faba"},
    "hyper": {"W": 5, "R": 4, "T": 40, "gamma": 0.05},
}


@pytest.fixture
def small_cfg(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return path


def test_defaults_match_reference_setup():
    cfg = from_dict({})
    h = cfg.hyper
    assert (h.W, h.R, h.gamma, h.alpha) == (10, 9, 0.01, 0.1)
    assert cfg.aggregator.cc_tau == 10.0 and cfg.aggregator.cc_start == "previous"


def test_overrides_and_coercion():
    raw = apply_overrides({}, ["hyper.gamma=1e-3", "aggregator.kind=cc", "--partition.beta=0.5"])
    cfg = from_dict(raw)
    assert cfg.hyper.gamma == 0.001 and cfg.aggregator.kind == "cc" and cfg.partition.beta == 0.5
    with pytest.raises(ConfigError) as exc:
        from_dict({"hyper": {"gama": 0.1}})
    assert exc.value.field == "hyper.gama"


def test_one_class_needs_w_equal_k():
    with pytest.raises(ConfigError) as exc:
        from_dict({"partition": {"kind": "one_class"}, "hyper": {"W": 5, "R": 4}})
    assert exc.value.field == "partition"


def test_validate_config_exit_codes(small_cfg, capsys):
    assert main(["validate-config", str(small_cfg)]) == 0
    assert main(["validate-config", str(small_cfg), "--partition.kind=one_class"]) == 2
    assert "partition" in capsys.readouterr().err
    assert main(["validate-config", str(small_cfg), "--aggregator.kind=trimean", "--hyper.R=2"]) == 2


def test_run_writes_metrics_and_manifest(small_cfg, tmp_path):
    out = tmp_path / "run"
    assert main(["run", str(small_cfg), "--output-dir", str(out)]) == 0
    rows = list(csv.reader((out / "metrics.csv").open()))
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert len(rows) >= 3
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 0 and "version" in man and man["config"]["aggregator"]["kind"] == "faba"


def test_manifest_rerun_is_byte_identical(small_cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", str(small_cfg), "--output-dir", str(a)]) == 0
    assert main(["run", str(a / "manifest.json"), "--output-dir", str(b)]) == 0
    assert (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()


def test_divergence_exit_code(small_cfg, tmp_path, capsys):
    assert main(["run", str(small_cfg), "--output-dir", str(tmp_path / "d"), "--hyper.gamma=1e12",
                 "--aggregator.kind=mean"]) == 3
    assert "diverged" in capsys.readouterr().err


def test_schedule_is_recorded(small_cfg, tmp_path):
    out = tmp_path / "s"
    assert main(["run", str(small_cfg), "--output-dir", str(out), "--train.schedule=ragg"]) == 0
    sched = json.loads((out / "manifest.json").read_text())["schedule"]
    assert sched["gamma"] > 0 and sched["alpha"] == pytest.approx(min(8 * sched["L"] * sched["gamma"], 1.0))


def _sweep(tmp_path, grid, jobs=1, name="sw"):
    spec = tmp_path / f"{name}.yaml"
    spec.write_text(yaml.safe_dump({"base": SMALL, "grid": grid}))
    out = tmp_path / name
    code = main(["sweep", str(spec), "--output-dir", str(out), "--jobs", str(jobs)])
    return code, out


def test_single_cell_sweep_equals_run(tmp_path):
    code, out = _sweep(tmp_path, {"aggregator.kind": ["faba"]})
    assert code == 0
    run_dir = run_experiment(from_dict(SMALL), tmp_path / "single")
    cell = out / "aggregator.kind=faba"
    assert (cell / "metrics.csv").read_bytes() == (run_dir / "metrics.csv").read_bytes()
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert rows[0]["winner"] == "faba"


def test_sweep_parallel_matches_serial(tmp_path):
    grid = {"aggregator.kind": ["mean", "trimean", "faba"], "attack.flip_prob": [0.5, 1.0]}
    c1, s = _sweep(tmp_path, grid, 1, "serial")
    c2, p = _sweep(tmp_path, grid, 4, "parallel")
    assert c1 == c2 == 0
    assert (s / "summary.csv").read_bytes() == (p / "summary.csv").read_bytes()
    for cell in s.iterdir():
        if cell.is_dir():
            assert (cell / "metrics.csv").read_bytes() == (p / cell.name / "metrics.csv").read_bytes()
    rows = list(csv.DictReader((s / "summary.csv").open()))
    assert len(rows) == 2 and set(rows[0]) >= {"acc_mean", "acc_trimean", "acc_faba", "best_acc", "winner"}


def test_sweep_failed_cell_gives_exit_1(tmp_path):
    code, out = _sweep(tmp_path, {"hyper.gamma": [0.05, 1e12]})
    assert code == 1
    assert "diverged" in (out / "summary.csv").read_text()


def test_expand_grid():
    cells = expand_grid({"base": SMALL, "grid": {"hyper.R": [3, 4], "aggregator.kind": ["mean"]}})
    assert [c[0] for c in cells] == [{"hyper.R": 3, "aggregator.kind": "mean"}, {"hyper.R": 4, "aggregator.kind": "mean"}]
    with pytest.raises(ConfigError):
        expand_grid({"grid": {"hyper.R": []}})


def test_theory_command(tmp_path):
    report = tmp_path / "report.json"
    assert main(["theory", "--output", str(report), "--trials", "100"]) == 0
    data = json.loads(report.read_text())
    assert data["passed"] and set(data["checks_run"]) == {
        "assumption-audit", "contraction/cc", "contraction/faba", "contraction/trimean", "impossibility",
        "lower-bound", "mean-plateau", "mean-upper-bound"}


def test_theory_flags_injected_fault(tmp_path):
    report = tmp_path / "report.json"
    assert main(["theory", "--output", str(report), "--trials", "100", "--substitute", "faba=mean"]) == 1
    assert "contraction/faba" in json.loads(report.read_text())["failed"]


def test_console_script_entry(small_cfg):
    proc = subprocess.run([sys.executable, "-m", "poisonbench.cli", "validate-config", str(small_cfg)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["hyper"]["W"] == 5


def test_load_config_json(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(SMALL))
    assert load_config(p, ["hyper.T=5"]).hyper.T == 5
