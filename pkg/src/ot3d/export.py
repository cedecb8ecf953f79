"""Colored instance-segmentation export of the scene cloud."""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .classify import InstanceResult
from .errors import IndexOutOfRange
from .scene.ply import write_ply
from .scene.types import SceneBundle

GRAY = (128, 128, 128)


def instance_color(instance_id: int) -> tuple[int, int, int]:
    """Deterministic hash-based palette; never collides with the gray fill."""
    digest = hashlib.blake2b(str(instance_id).encode(), digest_size=3).digest()
    color = (digest[0], digest[1], digest[2])
    if color == GRAY:
        color = (digest[0], digest[1], (digest[2] + 1) % 256)
    return color


def export_ply(
    instances: list[InstanceResult], bundle: SceneBundle, path: Path | str
) -> None:
    """Write the cloud with per-point instance colors (gray = unassigned).

    Points claimed by several instances take the color of the lowest
    instance id (assignment order is id-ascending, first write wins).
    """
    n = len(bundle.cloud)
    colors = np.tile(np.array(GRAY, dtype=np.uint8), (n, 1))
    assigned = np.zeros(n, dtype=bool)
    for inst in sorted(instances, key=lambda r: r.proposal_id):
        idx = np.asarray(inst.point_indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise IndexOutOfRange(
                f"instance {inst.proposal_id} references points outside the cloud"
            )
        fresh = idx[~assigned[idx]]
        colors[fresh] = instance_color(inst.proposal_id)
        assigned[fresh] = True
    write_ply(path, bundle.cloud.positions, colors)
