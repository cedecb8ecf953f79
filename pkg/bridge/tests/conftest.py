"""Builds a tiny on-disk RGB-D dataset with colored-blob objects."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image, ImageDraw

WIDTH, HEIGHT = 64, 48
BACKGROUND = (40, 40, 40)


def _frame_image(offset: int, empty: bool = False) -> Image.Image:
    img = Image.new("RGB", (WIDTH, HEIGHT), BACKGROUND)
    if not empty:
        draw = ImageDraw.Draw(img)
        x = 8 + offset
        draw.rectangle([x, 10, x + 12, 22], fill=(220, 30, 30))
        draw.ellipse([40, 25, 54, 39], fill=(30, 200, 60))
    return img


@pytest.fixture(scope="session")
def rgbd_dataset(tmp_path_factory) -> Path:
    """5-frame dataset; frame 4 contains no objects."""
    root = tmp_path_factory.mktemp("rgbd")
    (root / "color").mkdir()
    (root / "depth").mkdir()
    (root / "poses").mkdir()
    (root / "intrinsics.json").write_text(
        json.dumps(
            {
                "fx": 55.0,
                "fy": 55.0,
                "cx": (WIDTH - 1) / 2.0,
                "cy": (HEIGHT - 1) / 2.0,
                "width": WIDTH,
                "height": HEIGHT,
            }
        )
    )
    rng = np.random.default_rng(3)
    for i in range(5):
        stem = f"{i:05d}"
        _frame_image(offset=2 * i, empty=(i == 4)).save(root / "color" / f"{stem}.png")
        depth = np.full((HEIGHT, WIDTH), 2.0, dtype=np.float32)
        depth += rng.uniform(-0.05, 0.05, size=depth.shape).astype(np.float32)
        np.save(root / "depth" / f"{stem}.npy", depth)
        pose = np.eye(4)
        pose[:3, 3] = [0.05 * i, 0.0, 0.0]
        (root / "poses" / f"{stem}.txt").write_text(
            " ".join(str(v) for v in pose.reshape(-1))
        )
    return root
