"""Writers for the scene-bundle directory format.

This module intentionally does not import the geometric pipeline: the
directory layout and blob encodings are the contract between the two
packages, so the bridge carries its own implementation of them.

Layout: manifest.json (version 1, camera intrinsics, camera_to_world
poses as 16 row-major numbers), depth blobs as raw little-endian f32
row-major H x W, detections as JSON with full-image RLE masks (runs
alternate starting with the zero run and sum to H*W), cloud.ply as
binary little-endian PLY with float x/y/z.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np


def encode_mask_rle(mask: np.ndarray) -> dict:
    m = np.asarray(mask, dtype=bool)
    flat = m.ravel()
    h, w = m.shape
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(starts).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return {"size": [h, w], "counts": counts}


def write_ply(path: Path | str, positions: np.ndarray) -> None:
    pos = np.ascontiguousarray(positions, dtype="<f4").reshape(-1, 3)
    header = (
        "ply\n"
        "format binary_little_endian 1.0\n"
        f"element vertex {pos.shape[0]}\n"
        "property float x\n"
        "property float y\n"
        "property float z\n"
        "end_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(pos.tobytes())


def write_depth(path: Path | str, depth: np.ndarray) -> None:
    Path(path).write_bytes(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def write_feature_map(path: Path | str, grid: np.ndarray) -> None:
    hp, wp, dim = grid.shape
    blob = struct.pack("<III", hp, wp, dim)
    blob += np.ascontiguousarray(grid, dtype="<f4").tobytes()
    Path(path).write_bytes(blob)


class BundleWriter:
    """Accumulates frames and emits a complete bundle directory."""

    def __init__(self, out_dir: Path | str, camera: dict):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.camera = camera
        self.frames: list[dict] = []

    def add_frame(
        self,
        frame_id: int,
        pose: np.ndarray,
        depth: np.ndarray,
        detections: list[dict],
        rgb_path: str | None,
        feature_map: np.ndarray | None = None,
    ) -> None:
        i = len(self.frames)
        depth_name = f"depth_{i:05d}.bin"
        det_name = f"detections_{i:05d}.json"
        write_depth(self.root / depth_name, depth)
        (self.root / det_name).write_text(json.dumps(detections, sort_keys=True))
        feat_name = None
        if feature_map is not None:
            feat_name = f"features_{i:05d}.bin"
            write_feature_map(self.root / feat_name, feature_map)
        self.frames.append(
            {
                "id": int(frame_id),
                "depth": depth_name,
                "pose": [float(v) for v in np.asarray(pose).reshape(-1)],
                "detections": det_name,
                "rgb": rgb_path,
                "feature_map": feat_name,
            }
        )

    def finish(self, cloud: np.ndarray | None) -> None:
        """Write cloud.ply (unless it already exists on disk) and the manifest."""
        if cloud is not None:
            write_ply(self.root / "cloud.ply", cloud)
        elif not (self.root / "cloud.ply").is_file():
            raise FileNotFoundError(f"no cloud data and no {self.root}/cloud.ply")
        manifest = {
            "version": 1,
            "camera": self.camera,
            "pose_convention": "camera_to_world",
            "frames": self.frames,
            "cloud": "cloud.ply",
            "superpoints": None,
            "ground_truth": None,
        }
        (self.root / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True)
        )
