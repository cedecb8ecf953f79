"""Uniform hash-grid index for gated nearest-neighbor and radius queries.

Cells are keyed by packing the three floor-quantized coordinates into one
int64 (21 bits per axis), which keeps lookups fully vectorized through
sorted-array binary search instead of per-point dict probes.
"""

from __future__ import annotations

import numpy as np

_AXIS_BITS = 21
_AXIS_OFFSET = 1 << (_AXIS_BITS - 1)
_AXIS_LIMIT = 1 << _AXIS_BITS


def _pack_cells(cells: np.ndarray) -> np.ndarray:
    shifted = cells + _AXIS_OFFSET
    if shifted.size and (shifted.min() < 0 or shifted.max() >= _AXIS_LIMIT):
        raise ValueError("point coordinates exceed the addressable grid range")
    return (
        (shifted[:, 0] << (2 * _AXIS_BITS))
        | (shifted[:, 1] << _AXIS_BITS)
        | shifted[:, 2]
    )


def _ranges_to_indices(starts: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Expand [start, start+count) ranges into one flat index array."""
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64)
    reps = np.repeat(starts, counts)
    offsets = np.arange(total, dtype=np.int64) - np.repeat(
        np.concatenate(([0], np.cumsum(counts)[:-1])), counts
    )
    return reps + offsets


class UniformGrid:
    """Spatial index over a fixed point set.

    All queries are range-gated: candidates are gathered from the
    (2k+1)^3 cell neighborhood with k = ceil(radius / cell_size), then
    filtered by exact distance. Distances use inclusive comparison.
    """

    def __init__(self, points: np.ndarray, cell_size: float):
        if not cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {cell_size}")
        self.points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        self.cell_size = float(cell_size)
        n = self.points.shape[0]
        if n:
            cells = np.floor(self.points / self.cell_size).astype(np.int64)
            keys = _pack_cells(cells)
            order = np.argsort(keys, kind="stable").astype(np.int64)
            self._keys = keys[order]
            self._order = order
        else:
            self._keys = np.empty(0, dtype=np.int64)
            self._order = np.empty(0, dtype=np.int64)

    def _reach(self, radius: float) -> int:
        return max(1, int(np.ceil(radius / self.cell_size)))

    def _offsets(self, reach: int) -> np.ndarray:
        r = np.arange(-reach, reach + 1, dtype=np.int64)
        grid = np.stack(np.meshgrid(r, r, r, indexing="ij"), axis=-1).reshape(-1, 3)
        return grid

    def _candidates(self, qcells: np.ndarray, offset: np.ndarray):
        """Data-point candidates in cell qcells+offset per query.

        Returns (query_ids, point_indices) in COO form.
        """
        keys = _pack_cells(qcells + offset)
        lo = np.searchsorted(self._keys, keys, side="left")
        hi = np.searchsorted(self._keys, keys, side="right")
        counts = hi - lo
        qids = np.repeat(np.arange(len(keys), dtype=np.int64), counts)
        pidx = self._order[_ranges_to_indices(lo, counts)]
        return qids, pidx

    def query_nearest(
        self, queries: np.ndarray, max_dist: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """Nearest data point per query within max_dist (inclusive).

        Returns (indices, distances); index -1 and distance +inf where no
        data point lies within the gate. Exact distance ties resolve to the
        lowest data-point index.
        """
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        nq = q.shape[0]
        npts = self.points.shape[0]
        best_d2 = np.full(nq, np.inf)
        best_idx = np.full(nq, -1, dtype=np.int64)
        if nq == 0 or npts == 0:
            return best_idx, np.sqrt(best_d2)
        qcells = np.floor(q / self.cell_size).astype(np.int64)
        batches = []
        for off in self._offsets(self._reach(max_dist)):
            qids, pidx = self._candidates(qcells, off)
            if len(qids) == 0:
                continue
            d2 = np.sum((self.points[pidx] - q[qids]) ** 2, axis=1)
            np.minimum.at(best_d2, qids, d2)
            batches.append((qids, pidx, d2))
        # Second pass: among candidates achieving the per-query minimum
        # squared distance, keep the lowest data index (deterministic ties).
        best_idx = np.full(nq, npts, dtype=np.int64)
        for qids, pidx, d2 in batches:
            hit = d2 == best_d2[qids]
            if np.any(hit):
                np.minimum.at(best_idx, qids[hit], pidx[hit])
        gate = max_dist * max_dist
        miss = (best_idx == npts) | (best_d2 > gate)
        best_idx[miss] = -1
        best_d2[miss] = np.inf
        return best_idx, np.sqrt(best_d2)

    def query_radius_union(self, queries: np.ndarray, radius: float) -> np.ndarray:
        """Sorted unique data indices within radius of any query point."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if q.shape[0] == 0 or self.points.shape[0] == 0:
            return np.empty(0, dtype=np.int64)
        qcells = np.floor(q / self.cell_size).astype(np.int64)
        r2 = radius * radius
        found = []
        for off in self._offsets(self._reach(radius)):
            qids, pidx = self._candidates(qcells, off)
            if len(qids) == 0:
                continue
            d2 = np.sum((self.points[pidx] - q[qids]) ** 2, axis=1)
            found.append(pidx[d2 <= r2])
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(found))

    def neighbors_csr(
        self, queries: np.ndarray, radius: float
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per-query neighbor lists within radius, as CSR (indptr, indices)."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        nq = q.shape[0]
        if nq == 0 or self.points.shape[0] == 0:
            return np.zeros(nq + 1, dtype=np.int64), np.empty(0, dtype=np.int64)
        qcells = np.floor(q / self.cell_size).astype(np.int64)
        r2 = radius * radius
        all_q, all_p = [], []
        for off in self._offsets(self._reach(radius)):
            qids, pidx = self._candidates(qcells, off)
            if len(qids) == 0:
                continue
            d2 = np.sum((self.points[pidx] - q[qids]) ** 2, axis=1)
            keep = d2 <= r2
            all_q.append(qids[keep])
            all_p.append(pidx[keep])
        if not all_q:
            return np.zeros(nq + 1, dtype=np.int64), np.empty(0, dtype=np.int64)
        qs = np.concatenate(all_q)
        ps = np.concatenate(all_p)
        order = np.lexsort((ps, qs))
        qs, ps = qs[order], ps[order]
        indptr = np.zeros(nq + 1, dtype=np.int64)
        np.cumsum(np.bincount(qs, minlength=nq), out=indptr[1:])
        return indptr, ps
