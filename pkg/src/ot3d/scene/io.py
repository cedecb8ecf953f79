"""Bundle directory loader/saver and temporal frame subsampling.

Directory layout (all paths relative to the bundle root):

    manifest.json        schema below
    depth_00000.bin      raw little-endian f32, row-major H x W
    detections_00000.json
    features_00000.bin   u32 H', u32 W', u32 D header + f32 data (optional)
    cloud.ply            binary little-endian PLY, float x/y/z
    superpoints.u32      N little-endian u32, 0xFFFFFFFF = unlabeled (optional)
    ground_truth.json    {"instances": [{"label", "point_indices"}]} (optional)

Manifest schema:

    {
      "version": 1,
      "camera": {"fx", "fy", "cx", "cy", "width", "height"},
      "pose_convention": "camera_to_world",
      "frames": [{"id", "depth", "pose": [16 row-major numbers],
                  "detections", "rgb", "feature_map"}],
      "cloud": "cloud.ply",
      "superpoints": <file or null>,
      "ground_truth": <file or null>
    }
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import (
    DimMismatch,
    InvalidBundle,
    InvalidPose,
    MalformedManifest,
    MissingFile,
)
from .rle import decode_mask, encode_mask
from .ply import read_ply, write_ply
from .types import (
    CameraModel,
    Detection2D,
    FrameRecord,
    GroundTruthInstance,
    Pose,
    SceneBundle,
    ScenePointCloud,
    UNLABELED_SUPERPOINT,
)

MANIFEST_VERSION = 1
POSE_CONVENTION = "camera_to_world"
_SUPERPOINT_SENTINEL = 0xFFFFFFFF

_MANIFEST_KEYS = {
    "version",
    "camera",
    "pose_convention",
    "frames",
    "cloud",
    "superpoints",
    "ground_truth",
}
_CAMERA_KEYS = {"fx", "fy", "cx", "cy", "width", "height"}
_FRAME_KEYS = {"id", "depth", "pose", "detections", "rgb", "feature_map"}
_DETECTION_KEYS = {"det_id", "bbox", "confidence", "mask_rle", "descriptor"}


def load_bundle(path: Path | str) -> SceneBundle:
    """Load and fully validate a bundle directory.

    Every failure path raises a typed Ot3dError subclass; no malformed
    input may escape as a bare KeyError/ValueError/struct error.
    """
    root = Path(path)
    manifest = _read_manifest(root / "manifest.json")

    cam = _parse_camera(manifest["camera"])
    frames = []
    for entry in manifest["frames"]:
        frames.append(_load_frame(root, entry, cam))

    cloud_pos, _ = read_ply(_require(root, manifest["cloud"]))
    sp_labels = None
    if manifest["superpoints"] is not None:
        sp_labels = _load_superpoints(
            _require(root, manifest["superpoints"]), cloud_pos.shape[0]
        )
    cloud = ScenePointCloud(positions=cloud_pos, superpoint_label=sp_labels)

    gt = None
    if manifest["ground_truth"] is not None:
        gt = _load_ground_truth(_require(root, manifest["ground_truth"]))

    bundle = SceneBundle(
        camera=cam, frames=tuple(frames), cloud=cloud, ground_truth=gt
    )
    bundle.validate()
    return bundle


def save_bundle(bundle: SceneBundle, path: Path | str) -> None:
    """Write a bundle directory that load_bundle reads back identically."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    frame_entries = []
    for i, frame in enumerate(bundle.frames):
        depth_name = f"depth_{i:05d}.bin"
        det_name = f"detections_{i:05d}.json"
        (root / depth_name).write_bytes(
            np.ascontiguousarray(frame.depth, dtype="<f4").tobytes()
        )
        dets = []
        for det in frame.detections:
            dets.append(
                {
                    "det_id": det.det_id,
                    "bbox": [float(v) for v in det.bbox],
                    "confidence": float(det.confidence),
                    "mask_rle": encode_mask(det.mask),
                    "descriptor": None
                    if det.descriptor is None
                    else [float(v) for v in det.descriptor],
                }
            )
        (root / det_name).write_text(json.dumps(dets, sort_keys=True))
        feat_name = None
        if frame.feature_map is not None:
            feat_name = f"features_{i:05d}.bin"
            hp, wp, dim = frame.feature_map.shape
            blob = struct.pack("<III", hp, wp, dim) + np.ascontiguousarray(
                frame.feature_map, dtype="<f4"
            ).tobytes()
            (root / feat_name).write_bytes(blob)
        frame_entries.append(
            {
                "id": int(frame.frame_id),
                "depth": depth_name,
                "pose": [float(v) for v in frame.pose.matrix.reshape(-1)],
                "detections": det_name,
                "rgb": frame.rgb_path,
                "feature_map": feat_name,
            }
        )

    write_ply(root / "cloud.ply", bundle.cloud.positions)

    sp_name = None
    if bundle.cloud.superpoint_label is not None:
        sp_name = "superpoints.u32"
        labels = bundle.cloud.superpoint_label.astype(np.int64)
        as_u32 = np.where(
            labels == UNLABELED_SUPERPOINT, _SUPERPOINT_SENTINEL, labels
        ).astype("<u4")
        (root / sp_name).write_bytes(as_u32.tobytes())

    gt_name = None
    if bundle.ground_truth is not None:
        gt_name = "ground_truth.json"
        payload = {
            "instances": [
                {
                    "label": inst.label,
                    "point_indices": [int(v) for v in inst.point_indices],
                }
                for inst in bundle.ground_truth
            ]
        }
        (root / gt_name).write_text(json.dumps(payload, sort_keys=True))

    manifest = {
        "version": MANIFEST_VERSION,
        "camera": {
            "fx": bundle.camera.fx,
            "fy": bundle.camera.fy,
            "cx": bundle.camera.cx,
            "cy": bundle.camera.cy,
            "width": bundle.camera.width,
            "height": bundle.camera.height,
        },
        "pose_convention": POSE_CONVENTION,
        "frames": frame_entries,
        "cloud": "cloud.ply",
        "superpoints": sp_name,
        "ground_truth": gt_name,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def subsample_frames(bundle: SceneBundle, stride: int) -> SceneBundle:
    """Keep frames at list positions 0, stride, 2*stride, ... in order."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return SceneBundle(
        camera=bundle.camera,
        frames=bundle.frames[::stride],
        cloud=bundle.cloud,
        ground_truth=bundle.ground_truth,
    )


# --- loader internals -----------------------------------------------------


def _read_manifest(path: Path) -> dict:
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    try:
        manifest = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedManifest(f"{path}: {exc}") from exc
    if not isinstance(manifest, dict):
        raise MalformedManifest("manifest root must be an object")
    if set(manifest) != _MANIFEST_KEYS:
        raise MalformedManifest(
            f"manifest keys {sorted(manifest)} != {sorted(_MANIFEST_KEYS)}"
        )
    if manifest["version"] != MANIFEST_VERSION:
        raise MalformedManifest(f"unsupported version {manifest['version']!r}")
    if manifest["pose_convention"] != POSE_CONVENTION:
        raise MalformedManifest(
            f"unsupported pose convention {manifest['pose_convention']!r}"
        )
    if not isinstance(manifest["frames"], list):
        raise MalformedManifest("manifest frames must be a list")
    for key in ("cloud",):
        if not isinstance(manifest[key], str):
            raise MalformedManifest(f"manifest '{key}' must be a file name")
    for key in ("superpoints", "ground_truth"):
        if manifest[key] is not None and not isinstance(manifest[key], str):
            raise MalformedManifest(f"manifest '{key}' must be a file name or null")
    return manifest


def _parse_camera(raw: object) -> CameraModel:
    if not isinstance(raw, dict) or set(raw) != _CAMERA_KEYS:
        raise MalformedManifest(f"camera must have keys {sorted(_CAMERA_KEYS)}")
    if not all(isinstance(raw[k], (int, float)) for k in ("fx", "fy", "cx", "cy")):
        raise MalformedManifest("camera intrinsics must be numbers")
    if not all(isinstance(raw[k], int) for k in ("width", "height")):
        raise MalformedManifest("camera width/height must be integers")
    cam = CameraModel(
        fx=float(raw["fx"]),
        fy=float(raw["fy"]),
        cx=float(raw["cx"]),
        cy=float(raw["cy"]),
        width=raw["width"],
        height=raw["height"],
    )
    cam.validate()
    return cam


def _parse_pose(raw: object) -> Pose:
    if (
        not isinstance(raw, list)
        or len(raw) != 16
        or not all(isinstance(v, (int, float)) for v in raw)
    ):
        raise InvalidPose("pose must be a list of 16 numbers")
    pose = Pose(matrix=np.array(raw, dtype=np.float64).reshape(4, 4))
    pose.validate()
    return pose


def _require(root: Path, name: object) -> Path:
    if not isinstance(name, str):
        raise MalformedManifest(f"expected a file name, got {name!r}")
    path = root / name
    if not path.is_file():
        raise MissingFile(f"referenced file not found: {path}")
    return path


def _load_frame(root: Path, entry: object, cam: CameraModel) -> FrameRecord:
    if not isinstance(entry, dict) or set(entry) != _FRAME_KEYS:
        raise MalformedManifest(f"frame entry must have keys {sorted(_FRAME_KEYS)}")
    if not isinstance(entry["id"], int):
        raise MalformedManifest("frame id must be an integer")
    pose = _parse_pose(entry["pose"])
    depth = _load_depth(_require(root, entry["depth"]), cam)
    detections = _load_detections(_require(root, entry["detections"]), cam)
    rgb = entry["rgb"]
    if rgb is not None and not isinstance(rgb, str):
        raise MalformedManifest("frame rgb must be a path or null")
    feature_map = None
    if entry["feature_map"] is not None:
        feature_map = _load_feature_map(_require(root, entry["feature_map"]))
    return FrameRecord(
        frame_id=entry["id"],
        pose=pose,
        depth=depth,
        detections=detections,
        rgb_path=rgb,
        feature_map=feature_map,
    )


def _load_depth(path: Path, cam: CameraModel) -> np.ndarray:
    blob = path.read_bytes()
    expected = cam.height * cam.width * 4
    if len(blob) != expected:
        raise DimMismatch(
            f"{path}: depth blob holds {len(blob)} bytes, expected {expected}"
        )
    return np.frombuffer(blob, dtype="<f4").reshape(cam.height, cam.width)


def _load_detections(path: Path, cam: CameraModel) -> tuple[Detection2D, ...]:
    try:
        raw = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InvalidBundle(f"{path}: {exc}") from exc
    if not isinstance(raw, list):
        raise InvalidBundle(f"{path}: detections must be a JSON array")
    out = []
    for i, det in enumerate(raw):
        if not isinstance(det, dict) or set(det) != _DETECTION_KEYS:
            raise InvalidBundle(
                f"{path}[{i}]: detection must have keys {sorted(_DETECTION_KEYS)}"
            )
        if not isinstance(det["det_id"], int):
            raise InvalidBundle(f"{path}[{i}]: det_id must be an integer")
        bbox = det["bbox"]
        if (
            not isinstance(bbox, list)
            or len(bbox) != 4
            or not all(isinstance(v, (int, float)) for v in bbox)
        ):
            raise InvalidBundle(f"{path}[{i}]: bbox must be 4 numbers")
        if not isinstance(det["confidence"], (int, float)):
            raise InvalidBundle(f"{path}[{i}]: confidence must be a number")
        mask = decode_mask(det["mask_rle"])
        if mask.shape != (cam.height, cam.width):
            raise DimMismatch(
                f"{path}[{i}]: mask {mask.shape} != camera "
                f"{cam.height}x{cam.width}"
            )
        descriptor = None
        if det["descriptor"] is not None:
            desc = det["descriptor"]
            if not isinstance(desc, list) or not all(
                isinstance(v, (int, float)) for v in desc
            ):
                raise InvalidBundle(f"{path}[{i}]: descriptor must be numbers")
            descriptor = np.array(desc, dtype=np.float64)
        out.append(
            Detection2D(
                det_id=det["det_id"],
                bbox=tuple(float(v) for v in bbox),
                mask=mask,
                confidence=float(det["confidence"]),
                descriptor=descriptor,
            )
        )
    return tuple(out)


def _load_feature_map(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < 12:
        raise DimMismatch(f"{path}: feature map shorter than its header")
    hp, wp, dim = struct.unpack("<III", blob[:12])
    expected = 12 + hp * wp * dim * 4
    if len(blob) != expected:
        raise DimMismatch(
            f"{path}: feature blob holds {len(blob)} bytes, expected {expected}"
        )
    return np.frombuffer(blob, dtype="<f4", offset=12).reshape(hp, wp, dim)


def _load_superpoints(path: Path, n_points: int) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) != n_points * 4:
        raise DimMismatch(
            f"{path}: superpoint blob holds {len(blob)} bytes, "
            f"expected {n_points * 4}"
        )
    raw = np.frombuffer(blob, dtype="<u4").astype(np.int64)
    return np.where(raw == _SUPERPOINT_SENTINEL, UNLABELED_SUPERPOINT, raw)


def _load_ground_truth(path: Path) -> tuple[GroundTruthInstance, ...]:
    try:
        raw = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise InvalidBundle(f"{path}: {exc}") from exc
    if not isinstance(raw, dict) or "instances" not in raw:
        raise InvalidBundle(f"{path}: ground truth must have 'instances'")
    out = []
    for i, inst in enumerate(raw["instances"]):
        if (
            not isinstance(inst, dict)
            or not isinstance(inst.get("label"), str)
            or not isinstance(inst.get("point_indices"), list)
            or not all(isinstance(v, int) for v in inst["point_indices"])
        ):
            raise InvalidBundle(f"{path}[{i}]: bad ground-truth instance")
        out.append(
            GroundTruthInstance(
                label=inst["label"],
                point_indices=np.array(sorted(inst["point_indices"]), dtype=np.int64),
            )
        )
    return tuple(out)
