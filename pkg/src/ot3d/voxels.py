"""Sparse voxel occupancy sets and the voxel-level IoU used for association."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import VoxelSizeMismatch

Cell = tuple[int, int, int]


@dataclass
class VoxelSet:
    """Set of occupied integer voxel cells at a fixed metric cell size."""

    voxel_size: float
    cells: set[Cell] = field(default_factory=set)

    def __post_init__(self) -> None:
        if not self.voxel_size > 0:
            raise ValueError(f"voxel_size must be positive, got {self.voxel_size}")

    def __len__(self) -> int:
        return len(self.cells)

    def __contains__(self, cell: Cell) -> bool:
        return cell in self.cells

    def copy(self) -> "VoxelSet":
        return VoxelSet(self.voxel_size, set(self.cells))

    def union_into(self, other: "VoxelSet") -> "VoxelSet":
        """Merge `other`'s cells into this set in place and return self."""
        _check_sizes(self, other)
        self.cells |= other.cells
        return self


def voxelize(points: np.ndarray, voxel_size: float) -> VoxelSet:
    """Quantize points to their occupied voxel cells.

    Uses floor semantics on each axis, so negative coordinates land in
    negative cells (-0.01 m at 0.05 m cells -> cell -1).
    """
    if not voxel_size > 0:
        raise ValueError(f"voxel_size must be positive, got {voxel_size}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        return VoxelSet(voxel_size)
    cells = np.floor(pts / voxel_size).astype(np.int64)
    return VoxelSet(voxel_size, set(map(tuple, cells.tolist())))


def voxel_iou(a: VoxelSet, b: VoxelSet) -> float:
    """Intersection-over-union of two voxel sets; 0.0 when both are empty."""
    _check_sizes(a, b)
    union = len(a.cells | b.cells)
    if union == 0:
        return 0.0
    return len(a.cells & b.cells) / union


def _check_sizes(a: VoxelSet, b: VoxelSet) -> None:
    if a.voxel_size != b.voxel_size:
        raise VoxelSizeMismatch(
            f"voxel sizes differ: {a.voxel_size} vs {b.voxel_size}"
        )
