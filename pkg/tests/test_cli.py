import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mslab.cli import main
from mslab.density import load_frame_json
from mslab.diagnostics import DiagnosticSeries
from mslab.experiments import EXPERIMENTS, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL = {
    "gaussian-collapse": {"grid": {"counts": [256]}, "evolution": {"substeps": 4}},
    "mixture-convergence": {"grid": {"counts": [512]}, "evolution": {"substeps": 4}},
    "entropy-monitor": {"grid": {"counts": [256]}, "evolution": {"substeps": 4}},
    "instability-demo": {"grid": {"counts": [512]}},
    "meanshift-vs-pde": {
        "grid": {"counts": [256]},
        "evolution": {"substeps": 10},
        "particles": {"count": 500, "record_every": 5},
        "meanshift": {"max_points": 100},
    },
    "supervised-run": {"grid": {"counts": [128]}, "evolution": {"substeps": 2}, "supervision": {"nodes": 8}},
}


def write_config(tmp_path, body, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(body))
    return p


def run(tmp_path, body, *extra, name="cfg.json"):
    cfg = write_config(tmp_path, body, name)
    return main(["run", str(cfg), *extra])


def test_list_experiments(capsys):
    assert main(["list-experiments"]) == 0
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert names == list(EXPERIMENTS)


def test_validate_materializes_defaults(tmp_path, capsys):
    cfg = write_config(tmp_path, {"experiment": "gaussian-collapse"})
    assert main(["validate", str(cfg)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["evolution"]["a2"] == 1.0 and out["seed"] == 0


@pytest.mark.parametrize(
    "body",
    [
        {"experiment": "nope"},
        {"experiment": "gaussian-collapse", "colour": "red"},
        {"experiment": "gaussian-collapse", "seed": -1},
        {"experiment": "gaussian-collapse", "evolution": {"a2": -1}},
        {"experiment": "meanshift-vs-pde", "dataset": "missing.csv"},
    ],
)
def test_config_errors_exit_2(tmp_path, body):
    assert run(tmp_path, body) == 2


def test_invalid_json_exit_2(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["validate", str(p)]) == 2


def test_io_error_exit_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    body = {"experiment": "gaussian-collapse", **SMALL["gaussian-collapse"]}
    assert run(tmp_path, body, "--out", str(blocker / "sub")) == 3


def test_experiment_error_exit_1(tmp_path):
    # tails cut at the box edge blow up in the clustering direction
    body = {
        "experiment": "gaussian-collapse",
        "grid": {"extents": [[-9.0, 9.0]], "counts": [512]},
        "evolution": {"t_end": -0.1, "substeps": 4},
    }
    assert run(tmp_path, body, "--out", str(tmp_path / "o")) == 1


@pytest.mark.parametrize("name", list(EXPERIMENTS))
def test_every_experiment_writes_complete_manifest(tmp_path, name):
    out = tmp_path / "out"
    assert run(tmp_path, {"experiment": name, **SMALL[name]}, "--out", str(out)) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["experiment"] == name
    assert {"version", "seed", "backend", "config", "results", "files", "duration_s"} <= set(man)
    listed = {f["path"] for f in man["files"]}
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()} - {"manifest.json"}
    assert listed == on_disk
    assert "diagnostics.csv" in listed and any(p.startswith("frames/") for p in listed)
    series = DiagnosticSeries.from_csv(out / "diagnostics.csv")
    frames = sorted((out / "frames").glob("*.json"))
    assert len(frames) == len(series.times)
    assert load_frame_json(frames[-1]).time == pytest.approx(series.times[-1])
    if name == "meanshift-vs-pde":
        assert "trajectory.jsonl" in listed
    if name == "instability-demo":
        assert man["results"]["blew_up"] and not man["results"]["plain_blew_up"]


def test_deterministic_runs_are_byte_identical(tmp_path):
    body = {"experiment": "meanshift-vs-pde", **SMALL["meanshift-vs-pde"]}
    assert run(tmp_path, body, "--out", str(tmp_path / "a"), "--deterministic") == 0
    assert run(tmp_path, body, "--out", str(tmp_path / "b"), "--deterministic") == 0
    for f in ("diagnostics.csv", "trajectory.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_dataset_ingestion(tmp_path):
    rng = np.random.default_rng(0)
    np.savetxt(tmp_path / "pts.csv", rng.normal(0, 1.4, (300, 1)), delimiter=",", header="x", comments="")
    body = {"experiment": "meanshift-vs-pde", **SMALL["meanshift-vs-pde"], "dataset": "pts.csv"}
    assert run(tmp_path, body, "--out", str(tmp_path / "o")) == 0
    traj = (tmp_path / "o" / "trajectory.jsonl").read_text().splitlines()
    assert json.loads(traj[0])["iter"] == 0


def test_dataset_parse_error_exit_2(tmp_path):
    (tmp_path / "pts.csv").write_text("x\n1.0\nfoo\n")
    body = {"experiment": "meanshift-vs-pde", **SMALL["meanshift-vs-pde"], "dataset": "pts.csv"}
    assert run(tmp_path, body, "--out", str(tmp_path / "o")) == 2


def test_shipped_configs_validate():
    for p in sorted(CONFIGS.glob("*.json")):
        assert load_config(p).name in EXPERIMENTS


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "mslab", "list-experiments"], capture_output=True, text=True)
    assert out.returncode == 0 and "gaussian-collapse" in out.stdout
