"""RGB-D capture folder reader.

Expected layout:

    intrinsics.json   {"fx","fy","cx","cy","width","height",
                       "depth_scale": <units per meter for png depth,
                                       default 1000.0>}
    color/<stem>.png|jpg
    depth/<stem>.npy  (float32 meters)  or  <stem>.png (uint16 / scale)
    poses/<stem>.txt  16 whitespace-separated numbers, row-major 4x4,
                      camera-to-world
    cloud.ply         optional pre-reconstructed scene cloud

Frames are enumerated by the sorted color file stems; every frame must
have registered depth and pose files with the same stem.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image


class DatasetError(RuntimeError):
    pass


@dataclass(frozen=True)
class DatasetFrame:
    stem: str
    color_path: Path
    depth: np.ndarray  # (H, W) float32 meters
    pose: np.ndarray  # (4, 4) float64


@dataclass(frozen=True)
class RgbdDataset:
    root: Path
    camera: dict
    frames: tuple[DatasetFrame, ...]
    cloud_path: Path | None


def load_dataset(root: Path | str) -> RgbdDataset:
    root = Path(root)
    intr_path = root / "intrinsics.json"
    if not intr_path.is_file():
        raise DatasetError(f"missing {intr_path}")
    camera = json.loads(intr_path.read_text())
    missing = {"fx", "fy", "cx", "cy", "width", "height"} - set(camera)
    if missing:
        raise DatasetError(f"intrinsics missing keys: {sorted(missing)}")
    depth_scale = float(camera.pop("depth_scale", 1000.0))

    color_dir = root / "color"
    if not color_dir.is_dir():
        raise DatasetError(f"missing color directory: {color_dir}")
    frames = []
    for color_path in sorted(color_dir.iterdir()):
        if color_path.suffix.lower() not in (".png", ".jpg", ".jpeg"):
            continue
        stem = color_path.stem
        try:
            depth = _load_depth(root / "depth", stem, depth_scale)
            pose = _load_pose(root / "poses" / f"{stem}.txt")
        except DatasetError as exc:
            raise DatasetError(f"frame {stem}: {exc}") from exc
        frames.append(
            DatasetFrame(stem=stem, color_path=color_path, depth=depth, pose=pose)
        )
    if not frames:
        raise DatasetError(f"no frames found under {color_dir}")
    cloud_path = root / "cloud.ply"
    return RgbdDataset(
        root=root,
        camera=camera,
        frames=tuple(frames),
        cloud_path=cloud_path if cloud_path.is_file() else None,
    )


def _load_depth(depth_dir: Path, stem: str, depth_scale: float) -> np.ndarray:
    npy = depth_dir / f"{stem}.npy"
    if npy.is_file():
        return np.load(npy).astype(np.float32)
    png = depth_dir / f"{stem}.png"
    if png.is_file():
        raw = np.asarray(Image.open(png), dtype=np.float32)
        return raw / depth_scale
    raise DatasetError(f"no depth file for stem {stem!r}")


def _load_pose(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DatasetError(f"no pose file {path}")
    values = [float(v) for v in path.read_text().split()]
    if len(values) != 16:
        raise DatasetError(f"pose file {path} holds {len(values)} numbers, need 16")
    return np.array(values, dtype=np.float64).reshape(4, 4)
