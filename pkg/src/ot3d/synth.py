"""Deterministic synthetic RGB-D scene generator with exact ground truth.

Depth is rendered by analytic ray casting against spheres, axis-aligned
boxes, and the room walls, so every depth value equals the closed-form
intersection distance. Detections are the exact per-object visibility
masks (optionally perturbed), descriptors derive from per-object unit
archetypes, and the scene cloud is a seeded surface sampling carrying
per-point instance ids and analytic superpoints (box faces, sphere
octants, wall planes). All randomness flows through streams keyed by
(seed, frame, purpose), so regeneration is bit-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidSpec
from .scene.types import (
    CameraModel,
    Detection2D,
    FrameRecord,
    GroundTruthInstance,
    Pose,
    SceneBundle,
    ScenePointCloud,
)

_PURPOSES = {
    "descriptor": 1,
    "dropout": 2,
    "depth": 3,
    "morph": 4,
    "cloud": 5,
}


def _rng(seed: int, frame: int, purpose: str, extra: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, frame, _PURPOSES[purpose], extra])


# --- primitives -------------------------------------------------------------


@dataclass(frozen=True)
class SpherePrimitive:
    center: np.ndarray
    radius: float
    label: str

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origin - self.center
        a = np.sum(dirs * dirs, axis=1)
        b = 2.0 * dirs @ oc
        c = float(oc @ oc) - self.radius**2
        disc = b * b - 4.0 * a * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        t_near = (-b - sq) / (2.0 * a)
        t_far = (-b + sq) / (2.0 * a)
        t = np.where(t_near > 0, t_near, t_far)
        return np.where(hit & (t > 0), t, np.inf)

    def contains(self, point: np.ndarray, margin: float = 0.0) -> bool:
        return float(np.linalg.norm(point - self.center)) <= self.radius + margin

    def surface_area(self) -> float:
        return 4.0 * np.pi * self.radius**2


@dataclass(frozen=True)
class BoxPrimitive:
    center: np.ndarray
    size: np.ndarray  # full extents per axis
    label: str

    @property
    def bmin(self) -> np.ndarray:
        return self.center - self.size / 2.0

    @property
    def bmax(self) -> np.ndarray:
        return self.center + self.size / 2.0

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        t_near, t_far = _slab_range(origin, dirs, self.bmin, self.bmax)
        hit = (t_near <= t_far) & (t_far > 0)
        t = np.where(t_near > 0, t_near, t_far)
        return np.where(hit & (t > 0), t, np.inf)

    def contains(self, point: np.ndarray, margin: float = 0.0) -> bool:
        return bool(
            np.all(point >= self.bmin - margin) and np.all(point <= self.bmax + margin)
        )

    def surface_area(self) -> float:
        sx, sy, sz = self.size
        return 2.0 * (sx * sy + sy * sz + sx * sz)


def _slab_range(
    origin: np.ndarray, dirs: np.ndarray, bmin: np.ndarray, bmax: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (bmin - origin) * inv
        t2 = (bmax - origin) * inv
    lo = np.minimum(t1, t2)
    hi = np.maximum(t1, t2)
    return np.nanmax(lo, axis=1), np.nanmin(hi, axis=1)


# --- spec -------------------------------------------------------------------


@dataclass(frozen=True)
class OrbitSpec:
    center: np.ndarray
    radius: float
    height: float
    frames: int


@dataclass(frozen=True)
class NoiseSpec:
    depth_sigma: float = 0.0
    descriptor_sigma: float = 0.0
    dropout: float = 0.0
    mask_dilation: float = 0.0  # probability of one dilation step per detection
    mask_erosion: float = 0.0


@dataclass(frozen=True)
class SamplingSpec:
    object_density: float = 3000.0  # samples per m^2
    wall_density: float = 250.0
    min_samples: int = 64


@dataclass(frozen=True)
class SceneSpec:
    room: np.ndarray  # extents (ex, ey, ez); box [-ex/2,ex/2]x[-ey/2,ey/2]x[0,ez]
    camera: CameraModel
    orbit: OrbitSpec
    objects: tuple[SpherePrimitive | BoxPrimitive, ...]
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    sampling: SamplingSpec = field(default_factory=SamplingSpec)
    seed: int = 0
    descriptor_dim: int = 16
    archetypes: tuple[np.ndarray, ...] | None = None

    @property
    def room_min(self) -> np.ndarray:
        ex, ey, _ = self.room
        return np.array([-ex / 2.0, -ey / 2.0, 0.0])

    @property
    def room_max(self) -> np.ndarray:
        ex, ey, ez = self.room
        return np.array([ex / 2.0, ey / 2.0, ez])

    def validate(self) -> None:
        if np.any(np.asarray(self.room) <= 0):
            raise InvalidSpec(f"room extents must be positive, got {self.room}")
        self.camera.validate()
        if self.orbit.frames < 1:
            raise InvalidSpec("orbit needs at least one frame")
        if self.orbit.radius <= 0:
            raise InvalidSpec("orbit radius must be positive")
        noise = self.noise
        for name in (
            "depth_sigma",
            "descriptor_sigma",
            "dropout",
            "mask_dilation",
            "mask_erosion",
        ):
            if getattr(noise, name) < 0:
                raise InvalidSpec(f"noise {name} must be >= 0")
        for p in ("dropout", "mask_dilation", "mask_erosion"):
            if getattr(noise, p) > 1:
                raise InvalidSpec(f"noise {p} must be <= 1")
        if self.descriptor_dim < 1:
            raise InvalidSpec("descriptor_dim must be >= 1")
        if self.archetypes is not None and len(self.archetypes) != len(self.objects):
            raise InvalidSpec("one archetype per object required")
        for obj in self.objects:
            if isinstance(obj, SpherePrimitive):
                lo = obj.center - obj.radius
                hi = obj.center + obj.radius
            else:
                lo, hi = obj.bmin, obj.bmax
            if np.any(lo < self.room_min) or np.any(hi > self.room_max):
                raise InvalidSpec(f"object '{obj.label}' extends outside the room")
        for eye in orbit_eyes(self.orbit):
            if np.any(eye <= self.room_min) or np.any(eye >= self.room_max):
                raise InvalidSpec("camera trajectory leaves the room")
            for obj in self.objects:
                if obj.contains(eye, margin=1e-6):
                    raise InvalidSpec(f"camera enters object '{obj.label}'")


def orbit_eyes(orbit: OrbitSpec) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(orbit.frames) / orbit.frames
    return np.stack(
        [
            orbit.center[0] + orbit.radius * np.cos(angles),
            orbit.center[1] + orbit.radius * np.sin(angles),
            np.full(orbit.frames, orbit.center[2] + orbit.height),
        ],
        axis=1,
    )


def look_at_pose(eye: np.ndarray, target: np.ndarray) -> Pose:
    """Camera-to-world pose for +z forward, +y image-down conventions."""
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise InvalidSpec("camera eye coincides with its target")
    forward = forward / norm
    up = np.array([0.0, 0.0, 1.0])
    right = np.cross(forward, up)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        up = np.array([0.0, 1.0, 0.0])
        right = np.cross(forward, up)
        rn = np.linalg.norm(right)
    right = right / rn
    down = np.cross(forward, right)
    m = np.eye(4)
    m[:3, 0] = right
    m[:3, 1] = down
    m[:3, 2] = forward
    m[:3, 3] = eye
    return Pose(matrix=m)


# --- rendering --------------------------------------------------------------


def render_depth(
    cam: CameraModel,
    pose: Pose,
    objects: tuple[SpherePrimitive | BoxPrimitive, ...],
    room_min: np.ndarray,
    room_max: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Ray-cast one frame; returns (depth float32 HxW, owner int64 HxW).

    Owner is the object index of the nearest hit, -1 for room walls. The
    pixel ray direction has camera z = 1, so the ray parameter equals the
    camera-space depth directly.
    """
    h, w = cam.height, cam.width
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    dirs_cam = np.stack(
        [
            (us.ravel() - cam.cx) / cam.fx,
            (vs.ravel() - cam.cy) / cam.fy,
            np.ones(h * w),
        ],
        axis=1,
    )
    dirs_world = dirs_cam @ pose.rotation.T
    origin = pose.translation

    all_t = [obj.intersect(origin, dirs_world) for obj in objects]
    t_near, t_far = _slab_range(origin, dirs_world, room_min, room_max)
    room_t = np.where((t_near <= t_far) & (t_far > 0), t_far, np.inf)
    all_t.append(room_t)
    stack = np.stack(all_t, axis=0)
    owner = np.argmin(stack, axis=0)
    depth = stack[owner, np.arange(stack.shape[1])]
    owner = np.where(owner == len(objects), -1, owner)
    depth = np.where(np.isfinite(depth), depth, 0.0)
    return depth.reshape(h, w).astype(np.float32), owner.reshape(h, w)


# --- cloud sampling -----------------------------------------------------------


def _sample_sphere(
    rng: np.random.Generator, obj: SpherePrimitive, count: int
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform surface samples and their octant ids (0..7)."""
    raw = rng.normal(size=(count, 3))
    raw /= np.linalg.norm(raw, axis=1, keepdims=True)
    pts = obj.center + obj.radius * raw
    rel = pts - obj.center
    octant = (
        (rel[:, 0] >= 0).astype(np.int64) * 4
        + (rel[:, 1] >= 0).astype(np.int64) * 2
        + (rel[:, 2] >= 0).astype(np.int64)
    )
    return pts, octant


_FACE_AXES = ((0, False), (0, True), (1, False), (1, True), (2, False), (2, True))


def _sample_box_faces(
    rng: np.random.Generator, bmin: np.ndarray, bmax: np.ndarray, total: int
) -> tuple[np.ndarray, np.ndarray]:
    """Area-proportional samples over the 6 faces, with face ids (0..5)."""
    size = bmax - bmin
    areas = np.array(
        [
            size[1] * size[2],
            size[1] * size[2],
            size[0] * size[2],
            size[0] * size[2],
            size[0] * size[1],
            size[0] * size[1],
        ]
    )
    counts = np.maximum(1, np.round(total * areas / areas.sum()).astype(int))
    pts_parts, face_parts = [], []
    for face, (axis, positive) in enumerate(_FACE_AXES):
        n = int(counts[face])
        other = [a for a in range(3) if a != axis]
        pts = np.empty((n, 3))
        pts[:, axis] = bmax[axis] if positive else bmin[axis]
        for a in other:
            pts[:, a] = rng.uniform(bmin[a], bmax[a], size=n)
        pts_parts.append(pts)
        face_parts.append(np.full(n, face, dtype=np.int64))
    return np.concatenate(pts_parts), np.concatenate(face_parts)


def _build_cloud(
    spec: SceneSpec,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (positions, superpoint labels, owner ids; -1 for walls)."""
    sampling = spec.sampling
    positions, superpoints, owners = [], [], []
    next_sp = 0
    for i, obj in enumerate(spec.objects):
        rng = _rng(spec.seed, 0, "cloud", i + 1)
        count = max(
            sampling.min_samples, int(round(obj.surface_area() * sampling.object_density))
        )
        if isinstance(obj, SpherePrimitive):
            pts, part = _sample_sphere(rng, obj, count)
            n_parts = 8
        else:
            pts, part = _sample_box_faces(rng, obj.bmin, obj.bmax, count)
            n_parts = 6
        positions.append(pts)
        superpoints.append(next_sp + part)
        owners.append(np.full(pts.shape[0], i, dtype=np.int64))
        next_sp += n_parts
    # Room walls: sampled as the 6 faces of the room box, one superpoint each.
    rng = _rng(spec.seed, 0, "cloud", 0)
    ex, ey, ez = spec.room
    wall_area = 2.0 * (ex * ey + ey * ez + ex * ez)
    wall_count = max(
        sampling.min_samples, int(round(wall_area * sampling.wall_density))
    )
    pts, part = _sample_box_faces(rng, spec.room_min, spec.room_max, wall_count)
    positions.append(pts)
    superpoints.append(next_sp + part)
    owners.append(np.full(pts.shape[0], -1, dtype=np.int64))
    return (
        np.concatenate(positions),
        np.concatenate(superpoints),
        np.concatenate(owners),
    )


# --- generation ----------------------------------------------------------------


def _archetypes(spec: SceneSpec) -> list[np.ndarray]:
    if spec.archetypes is not None:
        out = []
        for i, vec in enumerate(spec.archetypes):
            v = np.asarray(vec, dtype=np.float64)
            n = np.linalg.norm(v)
            if n == 0:
                raise InvalidSpec(f"archetype {i} is the zero vector")
            out.append(v / n)
        return out
    dim = max(spec.descriptor_dim, len(spec.objects))
    return [np.eye(dim)[i] for i in range(len(spec.objects))]


def generate(spec: SceneSpec) -> SceneBundle:
    """Render the full bundle: frames, detections, cloud, ground truth."""
    spec.validate()
    archetypes = _archetypes(spec)
    cam = spec.camera
    eyes = orbit_eyes(spec.orbit)
    target = np.asarray(spec.orbit.center, dtype=np.float64)

    frames = []
    for k in range(spec.orbit.frames):
        pose = look_at_pose(eyes[k], target)
        depth, owner = render_depth(
            cam, pose, spec.objects, spec.room_min, spec.room_max
        )
        detections = []
        for i in range(len(spec.objects)):
            mask = owner == i
            if not np.any(mask):
                continue
            noise = spec.noise
            if noise.mask_dilation > 0 or noise.mask_erosion > 0:
                mask = _morph_mask(
                    mask, noise, _rng(spec.seed, k, "morph", i)
                )
                if mask is None:
                    continue
            if noise.dropout > 0 and _rng(spec.seed, k, "dropout", i).uniform() < noise.dropout:
                continue
            descriptor = archetypes[i]
            if noise.descriptor_sigma > 0:
                descriptor = descriptor + _rng(spec.seed, k, "descriptor", i).normal(
                    scale=noise.descriptor_sigma, size=descriptor.shape
                )
                descriptor = descriptor / np.linalg.norm(descriptor)
            detections.append(
                Detection2D(
                    det_id=i,
                    bbox=_mask_bbox(mask),
                    mask=mask,
                    confidence=1.0,
                    descriptor=descriptor,
                )
            )
        if spec.noise.depth_sigma > 0:
            depth = _noisy_depth(
                depth, spec.noise.depth_sigma, _rng(spec.seed, k, "depth")
            )
        frames.append(
            FrameRecord(
                frame_id=k,
                pose=pose,
                depth=depth,
                detections=tuple(detections),
            )
        )

    positions, superpoints, owners = _build_cloud(spec)
    cloud = ScenePointCloud(
        positions=positions.astype(np.float32),
        superpoint_label=superpoints,
    )
    gt = tuple(
        GroundTruthInstance(
            label=obj.label,
            point_indices=np.flatnonzero(owners == i).astype(np.int64),
        )
        for i, obj in enumerate(spec.objects)
    )
    bundle = SceneBundle(
        camera=cam, frames=tuple(frames), cloud=cloud, ground_truth=gt
    )
    bundle.validate()
    return bundle


def perturb(bundle: SceneBundle, noise: NoiseSpec, seed: int) -> SceneBundle:
    """Corrupt depth, masks, and detection presence; ground truth untouched."""
    frames = []
    for frame in bundle.frames:
        depth = frame.depth
        if noise.depth_sigma > 0:
            depth = _noisy_depth(
                depth, noise.depth_sigma, _rng(seed, frame.frame_id, "depth")
            )
        detections = []
        for det in frame.detections:
            if (
                noise.dropout > 0
                and _rng(seed, frame.frame_id, "dropout", det.det_id).uniform()
                < noise.dropout
            ):
                continue
            mask = det.mask
            if noise.mask_dilation > 0 or noise.mask_erosion > 0:
                mask = _morph_mask(
                    mask, noise, _rng(seed, frame.frame_id, "morph", det.det_id)
                )
                if mask is None:
                    continue
            detections.append(
                replace(det, mask=mask, bbox=_mask_bbox(mask))
                if mask is not det.mask
                else det
            )
        frames.append(replace(frame, depth=depth, detections=tuple(detections)))
    return replace(bundle, frames=tuple(frames))


# --- noise helpers -----------------------------------------------------------


def _noisy_depth(
    depth: np.ndarray, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    out = depth.astype(np.float64)
    valid = out > 0
    out[valid] += rng.normal(scale=sigma, size=int(valid.sum()))
    return np.maximum(out, 0.0).astype(np.float32)


def _shift_or(mask: np.ndarray) -> np.ndarray:
    out = mask.copy()
    out[1:, :] |= mask[:-1, :]
    out[:-1, :] |= mask[1:, :]
    out[:, 1:] |= mask[:, :-1]
    out[:, :-1] |= mask[:, 1:]
    out[1:, 1:] |= mask[:-1, :-1]
    out[:-1, :-1] |= mask[1:, 1:]
    out[1:, :-1] |= mask[:-1, 1:]
    out[:-1, 1:] |= mask[1:, :-1]
    return out


def _morph_mask(
    mask: np.ndarray, noise: NoiseSpec, rng: np.random.Generator
) -> np.ndarray | None:
    """One random dilation/erosion step; None when the mask empties."""
    draw = rng.uniform()
    if draw < noise.mask_dilation:
        return _shift_or(mask)
    if draw < noise.mask_dilation + noise.mask_erosion:
        eroded = ~_shift_or(~mask)
        if not np.any(eroded):
            return None
        return eroded
    return mask


def _mask_bbox(mask: np.ndarray) -> tuple[float, float, float, float]:
    rows, cols = np.nonzero(mask)
    return (
        float(cols.min()),
        float(rows.min()),
        float(cols.max() + 1),
        float(rows.max() + 1),
    )


# --- JSON spec ingestion -------------------------------------------------------


_SPEC_KEYS = {
    "seed",
    "descriptor_dim",
    "room",
    "camera",
    "orbit",
    "objects",
    "noise",
    "sampling",
}


def load_scene_spec(path: Path | str) -> SceneSpec:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InvalidSpec(f"{path}: {exc}") from exc
    return scene_spec_from_dict(raw)


def scene_spec_from_dict(raw: dict) -> SceneSpec:
    if not isinstance(raw, dict):
        raise InvalidSpec("scene spec must be a JSON object")
    unknown = set(raw) - _SPEC_KEYS
    if unknown:
        raise InvalidSpec(f"unknown scene spec keys: {sorted(unknown)}")
    for key in ("room", "camera", "orbit", "objects"):
        if key not in raw:
            raise InvalidSpec(f"scene spec missing '{key}'")
    try:
        cam = CameraModel(**raw["camera"])
        orbit = OrbitSpec(
            center=np.asarray(raw["orbit"]["center"], dtype=np.float64),
            radius=float(raw["orbit"]["radius"]),
            height=float(raw["orbit"]["height"]),
            frames=int(raw["orbit"]["frames"]),
        )
        objects = []
        archetypes = []
        has_archetype = False
        for obj in raw["objects"]:
            kind = obj.get("kind")
            label = obj["label"]
            center = np.asarray(obj["center"], dtype=np.float64)
            if kind == "sphere":
                objects.append(
                    SpherePrimitive(center=center, radius=float(obj["radius"]), label=label)
                )
            elif kind == "box":
                objects.append(
                    BoxPrimitive(
                        center=center,
                        size=np.asarray(obj["size"], dtype=np.float64),
                        label=label,
                    )
                )
            else:
                raise InvalidSpec(f"unknown primitive kind {kind!r}")
            arch = obj.get("archetype")
            archetypes.append(None if arch is None else np.asarray(arch, dtype=np.float64))
            has_archetype = has_archetype or arch is not None
        if has_archetype and any(a is None for a in archetypes):
            raise InvalidSpec("either all objects carry archetypes or none do")
        spec = SceneSpec(
            room=np.asarray(raw["room"], dtype=np.float64),
            camera=cam,
            orbit=orbit,
            objects=tuple(objects),
            noise=NoiseSpec(**raw.get("noise", {})),
            sampling=SamplingSpec(**raw.get("sampling", {})),
            seed=int(raw.get("seed", 0)),
            descriptor_dim=int(raw.get("descriptor_dim", 16)),
            archetypes=tuple(archetypes) if has_archetype else None,
        )
    except InvalidSpec:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"bad scene spec: {exc}") from exc
    spec.validate()
    return spec
