"""Config fidelity, presets, strict parsing, and the CLI surface."""

import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from ot3d.config import PipelineConfig, config_from_dict, load_config, preset_config
from ot3d.errors import ConfigError
from ot3d.export import export_ply, instance_color
from ot3d.scene.io import load_bundle
from ot3d.scene.ply import read_ply

EXPECTED_DEFAULTS = {
    "stride": 1,
    "depth_range": [0.05, 20.0],
    "dbscan": {"eps": 0.08, "min_pts": 10},
    "tracker": {
        "alpha": 0.5,
        "tau_match": 0.4,
        "beta_ema": 0.9,
        "voxel_size": 0.05,
    },
    "refine": {
        "r_assoc": 0.05,
        "tau_exp": 0.03,
        "tau_vis": 0.1,
        "gamma": 0.3,
        "tau_merge": 0.6,
        "occlusion_check": False,
        "delta_occ": 0.05,
    },
    "classify": {
        "top_k": 3,
        "backend": "oracle",
        "label_set": None,
        "task": None,
        "embeddings": None,
        "descriptor_floor": 0.25,
    },
}


def test_default_config_snapshot():
    assert PipelineConfig().to_dict() == EXPECTED_DEFAULTS


def test_scenefun3d_preset():
    cfg = preset_config("scenefun3d")
    assert cfg.refine.tau_exp == 0.0
    assert cfg.refine.tau_vis == 0.8
    assert cfg.classify.top_k == 1
    # everything else stays at defaults
    assert cfg.tracker.alpha == 0.5 and cfg.tracker.tau_match == 0.4
    assert cfg.refine.tau_merge == 0.6 and cfg.refine.gamma == 0.3


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"blend": 0.5})


def test_unknown_section_key_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"tracker": {"alpha": 0.5, "speed": 9}})


def test_out_of_range_alpha_rejected():
    with pytest.raises(ConfigError):
        config_from_dict({"tracker": {"alpha": 1.7}})


def test_partial_override_keeps_defaults():
    cfg = config_from_dict({"refine": {"tau_vis": 0.8}})
    assert cfg.refine.tau_vis == 0.8
    assert cfg.refine.tau_exp == 0.03


def test_unknown_preset_rejected():
    with pytest.raises(ConfigError):
        preset_config("scannet-extreme")


# --- CLI end-to-end ----------------------------------------------------------------


SCENE_SPEC = {
    "seed": 3,
    "room": [6.0, 6.0, 3.0],
    "camera": {
        "fx": 80.0,
        "fy": 80.0,
        "cx": 47.5,
        "cy": 35.5,
        "width": 96,
        "height": 72,
    },
    "orbit": {"center": [0.0, 0.0, 1.0], "radius": 2.0, "height": 0.3, "frames": 10},
    "objects": [
        {"kind": "sphere", "center": [0.9, 0.0, 1.0], "radius": 0.2, "label": "ball"},
        {"kind": "sphere", "center": [-0.9, 0.0, 1.1], "radius": 0.22, "label": "globe"},
        {
            "kind": "box",
            "center": [0.0, 0.9, 0.95],
            "size": [0.3, 0.3, 0.3],
            "label": "crate",
        },
    ],
    "sampling": {"object_density": 2000, "wall_density": 80},
}


def _cli(*args: str) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "ot3d.cli", *args], capture_output=True, text=True
    )


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "scene.json"
    spec_path.write_text(json.dumps(SCENE_SPEC))
    proc = _cli("synth", "--spec", str(spec_path), "--out", str(root / "bundle"))
    assert proc.returncode == 0, proc.stderr
    return root


def test_cli_validate(cli_workspace):
    proc = _cli("validate", str(cli_workspace / "bundle"))
    assert proc.returncode == 0, proc.stderr
    assert "ok:" in proc.stdout


def test_cli_bad_config_nonzero_exit(cli_workspace, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"tracker": {"alpha": 1.7}}))
    proc = _cli(
        "run",
        str(cli_workspace / "bundle"),
        "--config",
        str(bad),
        "--out",
        str(tmp_path / "out"),
    )
    assert proc.returncode != 0
    assert "alpha" in proc.stderr


def test_cli_stage_refine_stops_before_jobs(cli_workspace):
    out = cli_workspace / "stage_refine"
    proc = _cli(
        "run",
        str(cli_workspace / "bundle"),
        "--stage",
        "refine",
        "--out",
        str(out),
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "proposals.json").is_file()
    assert not (out / "jobs.jsonl").exists()
    assert not (out / "results.json").exists()
    payload = json.loads((out / "proposals.json").read_text())
    assert len(payload["proposals"]) == 3


def test_cli_full_run_eval_export(cli_workspace):
    out = cli_workspace / "full"
    proc = _cli(
        "run", str(cli_workspace / "bundle"), "--out", str(out)
    )
    assert proc.returncode == 0, proc.stderr
    assert "resolved config" in proc.stdout
    results = json.loads((out / "results.json").read_text())
    assert len(results["instances"]) == 3
    assert (out / "jobs.jsonl").is_file() and (out / "answers.jsonl").is_file()
    report = json.loads((out / "stage_report.json").read_text())
    assert report["tracks"] == 3

    proc = _cli(
        "eval",
        str(out / "results.json"),
        str(cli_workspace / "bundle"),
        "--out",
        str(out / "ap_report.json"),
    )
    assert proc.returncode == 0, proc.stderr
    ap = json.loads((out / "ap_report.json").read_text())
    assert ap["mean_ap"] == 1.0 and ap["mean_ap50"] == 1.0 and ap["mean_ap25"] == 1.0

    proc = _cli(
        "export-ply",
        str(out / "results.json"),
        str(cli_workspace / "bundle"),
        "--out",
        str(out / "instances.ply"),
    )
    assert proc.returncode == 0, proc.stderr
    _, colors = read_ply(out / "instances.ply")
    distinct = {tuple(c) for c in colors.tolist()}
    assert len(distinct) == 4  # 3 instances + gray


def test_cli_run_determinism(cli_workspace):
    out_a = cli_workspace / "det_a"
    out_b = cli_workspace / "det_b"
    for out in (out_a, out_b):
        proc = _cli("run", str(cli_workspace / "bundle"), "--out", str(out))
        assert proc.returncode == 0, proc.stderr
    assert (out_a / "results.json").read_bytes() == (out_b / "results.json").read_bytes()


def test_cli_eval_shuffled_results_identical(cli_workspace, tmp_path):
    out = cli_workspace / "full"
    results = json.loads((out / "results.json").read_text())
    results["instances"] = list(reversed(results["instances"]))
    shuffled = tmp_path / "shuffled.json"
    shuffled.write_text(json.dumps(results))
    a = _cli("eval", str(out / "results.json"), str(cli_workspace / "bundle"))
    b = _cli("eval", str(shuffled), str(cli_workspace / "bundle"))
    assert a.stdout == b.stdout


def test_cli_eval_empty_results(cli_workspace, tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"instances": []}))
    proc = _cli("eval", str(empty), str(cli_workspace / "bundle"))
    assert proc.returncode == 0
    payload = json.loads("{" + proc.stdout.split("{", 1)[1])
    assert payload["mean_ap"] == 0.0


def test_threads_env_does_not_change_results(cli_workspace, tmp_path):
    import os

    out = tmp_path / "threaded"
    env = dict(os.environ, OT3D_THREADS="4")
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "ot3d.cli",
            "run",
            str(cli_workspace / "bundle"),
            "--out",
            str(out),
        ],
        capture_output=True,
        text=True,
        env=env,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "results.json").read_bytes() == (
        cli_workspace / "full" / "results.json"
    ).read_bytes()


# --- export ------------------------------------------------------------------------


def test_export_empty_results_all_gray(cli_workspace, tmp_path):
    bundle = load_bundle(cli_workspace / "bundle")
    export_ply([], bundle, tmp_path / "gray.ply")
    _, colors = read_ply(tmp_path / "gray.ply")
    assert {tuple(c) for c in colors.tolist()} == {(128, 128, 128)}


def test_export_deterministic(cli_workspace, tmp_path):
    from ot3d.evalkit import load_results

    bundle = load_bundle(cli_workspace / "bundle")
    results = load_results(cli_workspace / "full" / "results.json")
    export_ply(results, bundle, tmp_path / "a.ply")
    export_ply(results, bundle, tmp_path / "b.ply")
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()


def test_instance_color_avoids_gray():
    for i in range(500):
        assert instance_color(i) != (128, 128, 128)
