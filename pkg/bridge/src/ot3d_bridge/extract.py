"""Dataset -> scene bundle extraction using the pluggable 2D backends."""

from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .bundlefmt import BundleWriter, encode_mask_rle
from .dataset import RgbdDataset, load_dataset
from .models import Detector, FeatureExtractor, Masker, build_models

logger = logging.getLogger(__name__)


@dataclass
class ExtractorConfig:
    vocabulary: list[str] = field(default_factory=lambda: ["object"])
    models: str = "stub"  # 'stub' | 'real'
    emit_feature_maps: bool = False
    min_mask_pixels: int = 4
    cloud_voxel: float = 0.02  # downsample size when fusing a cloud from depth
    cloud_frame_stride: int = 1
    cloud_pixel_stride: int = 4

    def validate(self) -> None:
        if not self.vocabulary:
            raise ValueError("detector vocabulary must be nonempty")


def extract(
    dataset_dir: Path | str,
    out_dir: Path | str,
    cfg: ExtractorConfig,
    models: tuple[Detector, Masker, FeatureExtractor] | None = None,
) -> Path:
    """Run detection/masking/feature pooling and write a bundle directory."""
    cfg.validate()
    dataset = load_dataset(dataset_dir)
    detector, masker, features = models or build_models(cfg.models)
    out = Path(out_dir)
    writer = BundleWriter(out, camera=dataset.camera)
    rgb_dir = out / "rgb"
    rgb_dir.mkdir(parents=True, exist_ok=True)

    width = dataset.camera["width"]
    height = dataset.camera["height"]
    for frame_id, frame in enumerate(dataset.frames):
        try:
            image = np.asarray(Image.open(frame.color_path).convert("RGB"))
            boxes = detector.detect(image, cfg.vocabulary)
            masks = masker.segment(image, boxes)
            grid = features.extract(image)
            detections = []
            for det_id, (box, mask) in enumerate(zip(boxes, masks)):
                if int(mask.sum()) < cfg.min_mask_pixels:
                    continue
                descriptor = _pool_descriptor(grid, mask, width, height)
                if descriptor is None:
                    continue
                ys, xs = np.nonzero(mask)
                detections.append(
                    {
                        "det_id": det_id,
                        "bbox": [
                            float(xs.min()),
                            float(ys.min()),
                            float(xs.max() + 1),
                            float(ys.max() + 1),
                        ],
                        "confidence": max(0.0, min(1.0, float(box.score))),
                        "mask_rle": encode_mask_rle(mask),
                        "descriptor": [float(v) for v in descriptor],
                    }
                )
            rgb_copy = rgb_dir / f"rgb_{frame_id:05d}{frame.color_path.suffix}"
            shutil.copyfile(frame.color_path, rgb_copy)
            writer.add_frame(
                frame_id=frame_id,
                pose=frame.pose,
                depth=frame.depth,
                detections=detections,
                rgb_path=str(rgb_copy.resolve()),
                feature_map=grid if cfg.emit_feature_maps else None,
            )
        except Exception as exc:
            raise RuntimeError(
                f"extraction failed at frame {frame.stem!r}: {exc}"
            ) from exc

    if dataset.cloud_path is not None:
        shutil.copyfile(dataset.cloud_path, out / "cloud.ply")
        writer.finish(None)
    else:
        writer.finish(_fuse_cloud(dataset, cfg))
    logger.info("wrote bundle with %d frames to %s", len(dataset.frames), out)
    return out


def _pool_descriptor(
    grid: np.ndarray, mask: np.ndarray, width: int, height: int
) -> np.ndarray | None:
    """Mean of grid cells whose center falls inside the mask, normalized.

    Cell (r, c) has image-coordinate center ((c+0.5)*width/W',
    (r+0.5)*height/H'); the owning pixel is the floor of that center.
    """
    hp, wp, _ = grid.shape
    sx, sy = width / wp, height / hp
    cols, rows = np.meshgrid(np.arange(wp), np.arange(hp))
    px = np.floor((cols.ravel() + 0.5) * sx).astype(np.int64)
    py = np.floor((rows.ravel() + 0.5) * sy).astype(np.int64)
    ok = (px >= 0) & (px < width) & (py >= 0) & (py < height)
    hit = np.zeros(px.shape, dtype=bool)
    hit[ok] = mask[py[ok], px[ok]]
    if not hit.any():
        return None
    mean = grid.reshape(-1, grid.shape[2])[hit].astype(np.float64).mean(axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        return None
    return mean / norm


def _fuse_cloud(dataset: RgbdDataset, cfg: ExtractorConfig) -> np.ndarray:
    """Back-project valid depth into world space, voxel-downsampled."""
    cam = dataset.camera
    fx, fy, cx, cy = cam["fx"], cam["fy"], cam["cx"], cam["cy"]
    cells: dict[tuple[int, int, int], np.ndarray] = {}
    v = cfg.cloud_voxel
    for frame in dataset.frames[:: cfg.cloud_frame_stride]:
        depth = frame.depth[:: cfg.cloud_pixel_stride, :: cfg.cloud_pixel_stride]
        vs, us = np.nonzero(depth > 0)
        d = depth[vs, us].astype(np.float64)
        us = us * cfg.cloud_pixel_stride
        vs = vs * cfg.cloud_pixel_stride
        pts_cam = np.stack(
            [(us - cx) * d / fx, (vs - cy) * d / fy, d], axis=1
        )
        rot, trans = frame.pose[:3, :3], frame.pose[:3, 3]
        world = pts_cam @ rot.T + trans
        keys = np.floor(world / v).astype(np.int64)
        for key, point in zip(map(tuple, keys.tolist()), world):
            cells.setdefault(key, point)
    if not cells:
        raise RuntimeError("no valid depth anywhere; cannot fuse a cloud")
    return np.array(list(cells.values()), dtype=np.float32)
