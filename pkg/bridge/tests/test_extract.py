"""Extraction writes bundles that the geometric pipeline accepts."""

import json
import subprocess
import sys

import numpy as np
import pytest

from ot3d_bridge.extract import ExtractorConfig, extract


@pytest.fixture(scope="module")
def extracted(rgbd_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle") / "bundle"
    cfg = ExtractorConfig(vocabulary=["block", "ball"], models="stub")
    extract(rgbd_dataset, out, cfg)
    return out


def test_bundle_passes_pipeline_validate(extracted):
    proc = subprocess.run(
        [sys.executable, "-m", "ot3d.cli", "validate", str(extracted)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "ok:" in proc.stdout
    assert "5 frames" in proc.stdout


def test_manifest_structure(extracted):
    manifest = json.loads((extracted / "manifest.json").read_text())
    assert manifest["version"] == 1
    assert manifest["pose_convention"] == "camera_to_world"
    assert len(manifest["frames"]) == 5
    assert manifest["cloud"] == "cloud.ply"
    for entry in manifest["frames"]:
        assert entry["rgb"] is not None


def test_empty_frame_retained_with_no_detections(extracted):
    manifest = json.loads((extracted / "manifest.json").read_text())
    per_frame = []
    for entry in manifest["frames"]:
        dets = json.loads((extracted / entry["detections"]).read_text())
        per_frame.append(len(dets))
    assert per_frame[4] == 0  # last frame is objectless but present
    assert all(n == 2 for n in per_frame[:4])


def test_descriptor_norms_unit(extracted):
    manifest = json.loads((extracted / "manifest.json").read_text())
    checked = 0
    for entry in manifest["frames"]:
        for det in json.loads((extracted / entry["detections"]).read_text()):
            norm = float(np.linalg.norm(np.array(det["descriptor"])))
            assert abs(norm - 1.0) <= 1e-4
            checked += 1
    assert checked == 8


def test_masks_sum_to_canvas(extracted):
    manifest = json.loads((extracted / "manifest.json").read_text())
    entry = manifest["frames"][0]
    for det in json.loads((extracted / entry["detections"]).read_text()):
        rle = det["mask_rle"]
        assert sum(rle["counts"]) == rle["size"][0] * rle["size"][1]


def test_provided_cloud_is_copied(rgbd_dataset, tmp_path):
    from ot3d_bridge.bundlefmt import write_ply

    # Place a cloud.ply in the dataset: extraction must pass it through.
    cloud_src = rgbd_dataset / "cloud.ply"
    pts = np.random.default_rng(0).normal(size=(50, 3)).astype(np.float32)
    write_ply(cloud_src, pts)
    try:
        out = tmp_path / "bundle"
        extract(rgbd_dataset, out, ExtractorConfig(vocabulary=["x"]))
        assert (out / "cloud.ply").read_bytes() == cloud_src.read_bytes()
    finally:
        cloud_src.unlink()


def test_empty_vocabulary_rejected(rgbd_dataset, tmp_path):
    with pytest.raises(ValueError):
        extract(rgbd_dataset, tmp_path / "b", ExtractorConfig(vocabulary=[]))
