"""Minimal binary little-endian PLY reader/writer for point clouds."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import DimMismatch, InvalidBundle

_PROPERTY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}


def write_ply(
    path: Path | str, positions: np.ndarray, colors: np.ndarray | None = None
) -> None:
    """Write positions (N,3) float32 and optional (N,3) uint8 colors."""
    pos = np.ascontiguousarray(positions, dtype=np.float32).reshape(-1, 3)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    props = ["property float x", "property float y", "property float z"]
    if colors is not None:
        colors = np.ascontiguousarray(colors, dtype=np.uint8).reshape(-1, 3)
        if colors.shape[0] != pos.shape[0]:
            raise ValueError("colors and positions must have equal length")
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        props += ["property uchar red", "property uchar green", "property uchar blue"]
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"element vertex {pos.shape[0]}",
            *props,
            "end_header",
        ]
    )
    rec = np.empty(pos.shape[0], dtype=fields)
    rec["x"], rec["y"], rec["z"] = pos[:, 0], pos[:, 1], pos[:, 2]
    if colors is not None:
        rec["red"], rec["green"], rec["blue"] = (
            colors[:, 0],
            colors[:, 1],
            colors[:, 2],
        )
    with open(path, "wb") as f:
        f.write(header.encode("ascii") + b"\n")
        f.write(rec.tobytes())


def read_ply(path: Path | str) -> tuple[np.ndarray, np.ndarray | None]:
    """Read a binary little-endian PLY; returns (positions f32, colors|None)."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply") or end < 0:
        raise InvalidBundle(f"{path}: not a PLY file")
    header = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n") :]

    n_vertex = None
    fields: list[tuple[str, str]] = []
    fmt_ok = False
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt_ok = len(parts) >= 2 and parts[1] == "binary_little_endian"
        elif parts[0] == "element":
            if len(parts) == 3 and parts[1] == "vertex":
                try:
                    n_vertex = int(parts[2])
                except ValueError as exc:
                    raise InvalidBundle(f"{path}: bad vertex count") from exc
            elif n_vertex is not None:
                break  # only the vertex element is supported
        elif parts[0] == "property" and n_vertex is not None:
            if len(parts) != 3 or parts[1] not in _PROPERTY_TYPES:
                raise InvalidBundle(f"{path}: unsupported property '{line}'")
            fields.append((parts[2], _PROPERTY_TYPES[parts[1]]))
    if not fmt_ok:
        raise InvalidBundle(f"{path}: only binary_little_endian is supported")
    if n_vertex is None or n_vertex < 0:
        raise InvalidBundle(f"{path}: missing vertex element")
    names = [name for name, _ in fields]
    for axis in ("x", "y", "z"):
        if axis not in names:
            raise InvalidBundle(f"{path}: missing '{axis}' property")
    dtype = np.dtype(fields)
    expected = n_vertex * dtype.itemsize
    if len(body) < expected:
        raise DimMismatch(
            f"{path}: vertex data holds {len(body)} bytes, expected {expected}"
        )
    rec = np.frombuffer(body[:expected], dtype=dtype)
    pos = np.stack(
        [
            rec["x"].astype(np.float32),
            rec["y"].astype(np.float32),
            rec["z"].astype(np.float32),
        ],
        axis=1,
    )
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack(
            [
                rec["red"].astype(np.uint8),
                rec["green"].astype(np.uint8),
                rec["blue"].astype(np.uint8),
            ],
            axis=1,
        )
    return pos, colors
