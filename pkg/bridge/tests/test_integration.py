"""Full loop: extracted bundle -> pipeline run with the bridge as the
external classifier backend, exercised purely through CLI + file formats."""

import json
import subprocess
import sys

from ot3d_bridge.extract import ExtractorConfig, extract


def test_pipeline_consumes_bridge_backend(rgbd_dataset, tmp_path):
    bundle = tmp_path / "bundle"
    extract(rgbd_dataset, bundle, ExtractorConfig(vocabulary=["block", "ball"]))

    out = tmp_path / "run"
    config = tmp_path / "config.json"
    config.write_text(
        json.dumps(
            {
                "classify": {
                    "backend": f"external:{sys.executable} -m ot3d_bridge.cli serve",
                    "label_set": ["block", "ball"],
                },
                # stub depth is a noisy plane: cluster leniently
                "dbscan": {"eps": 0.15, "min_pts": 5},
            }
        )
    )
    proc = subprocess.run(
        [
            sys.executable,
            "-m",
            "ot3d.cli",
            "run",
            str(bundle),
            "--config",
            str(config),
            "--out",
            str(out),
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    results = json.loads((out / "results.json").read_text())
    assert len(results["instances"]) >= 1
    labels = {inst["label"] for inst in results["instances"]}
    assert labels <= {"block", "ball"}
    # the transcript satisfies the wire protocol
    jobs = [
        json.loads(line)
        for line in (out / "jobs.jsonl").read_text().splitlines()
        if line.strip()
    ]
    answers = [
        json.loads(line)
        for line in (out / "answers.jsonl").read_text().splitlines()
        if line.strip()
    ]
    assert sorted(a["job_id"] for a in answers) == sorted(j["job_id"] for j in jobs)
