"""Pluggable 2D perception backends: detector, masker, feature extractor.

The stub implementations are deterministic and model-free (color-blob
analysis), which keeps the extraction pipeline fully testable. The real
wrappers bind to open-vocabulary detection / promptable segmentation /
dense-feature models and require their optional dependencies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np


@dataclass(frozen=True)
class BoxDetection:
    bbox: tuple[float, float, float, float]  # x0, y0, x1, y1
    score: float
    label: str


class Detector(Protocol):
    def detect(self, image: np.ndarray, vocabulary: list[str]) -> list[BoxDetection]:
        """Propose boxes for the vocabulary on an RGB uint8 image."""


class Masker(Protocol):
    def segment(
        self, image: np.ndarray, boxes: list[BoxDetection]
    ) -> list[np.ndarray]:
        """One full-image boolean mask per box."""


class FeatureExtractor(Protocol):
    def extract(self, image: np.ndarray) -> np.ndarray:
        """Dense (H', W', D) float32 descriptor grid."""


# --- deterministic stubs --------------------------------------------------------


def _connected_components(fg: np.ndarray) -> list[np.ndarray]:
    """4-connected components of a boolean image, largest first."""
    h, w = fg.shape
    seen = np.zeros_like(fg, dtype=bool)
    comps = []
    for sy, sx in zip(*np.nonzero(fg)):
        if seen[sy, sx]:
            continue
        stack = [(int(sy), int(sx))]
        seen[sy, sx] = True
        pixels = []
        while stack:
            y, x = stack.pop()
            pixels.append((y, x))
            for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                if 0 <= ny < h and 0 <= nx < w and fg[ny, nx] and not seen[ny, nx]:
                    seen[ny, nx] = True
                    stack.append((ny, nx))
        comp = np.zeros((h, w), dtype=bool)
        ys, xs = zip(*pixels)
        comp[list(ys), list(xs)] = True
        comps.append(comp)
    comps.sort(key=lambda c: -int(c.sum()))
    return comps


class StubDetector:
    """Treats saturated color blobs (distinct from the border background)
    as detections; labels cycle through the vocabulary deterministically."""

    def __init__(self, min_pixels: int = 12, color_tol: int = 30):
        self.min_pixels = min_pixels
        self.color_tol = color_tol

    def detect(self, image: np.ndarray, vocabulary: list[str]) -> list[BoxDetection]:
        background = image[0, 0].astype(np.int64)
        diff = np.abs(image.astype(np.int64) - background).sum(axis=2)
        fg = diff > self.color_tol
        out = []
        for i, comp in enumerate(_connected_components(fg)):
            if comp.sum() < self.min_pixels:
                continue
            ys, xs = np.nonzero(comp)
            label = vocabulary[i % len(vocabulary)] if vocabulary else "object"
            out.append(
                BoxDetection(
                    bbox=(
                        float(xs.min()),
                        float(ys.min()),
                        float(xs.max() + 1),
                        float(ys.max() + 1),
                    ),
                    score=min(1.0, comp.sum() / 400.0),
                    label=label,
                )
            )
        return out


class StubMasker:
    """Segments each box by color similarity to the box-center pixel."""

    def __init__(self, color_tol: int = 40):
        self.color_tol = color_tol

    def segment(
        self, image: np.ndarray, boxes: list[BoxDetection]
    ) -> list[np.ndarray]:
        h, w = image.shape[:2]
        masks = []
        for det in boxes:
            x0, y0, x1, y1 = (int(round(v)) for v in det.bbox)
            cx = min(max((x0 + x1) // 2, 0), w - 1)
            cy = min(max((y0 + y1) // 2, 0), h - 1)
            seed = image[cy, cx].astype(np.int64)
            mask = np.zeros((h, w), dtype=bool)
            region = image[y0:y1, x0:x1].astype(np.int64)
            close = np.abs(region - seed).sum(axis=2) <= self.color_tol
            mask[y0:y1, x0:x1] = close
            masks.append(mask)
        return masks


class StubFeatures:
    """Normalized RGB means over a coarse grid (stride-pooled)."""

    def __init__(self, stride: int = 8):
        self.stride = stride

    def extract(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape[:2]
        hp, wp = max(1, h // self.stride), max(1, w // self.stride)
        grid = np.zeros((hp, wp, 3), dtype=np.float32)
        for r in range(hp):
            for c in range(wp):
                cell = image[
                    r * self.stride : min(h, (r + 1) * self.stride),
                    c * self.stride : min(w, (c + 1) * self.stride),
                ]
                grid[r, c] = cell.reshape(-1, 3).mean(axis=0) / 255.0
        return grid


# --- real model wrappers (optional dependencies) -----------------------------------


class YoloWorldDetector:
    """Open-vocabulary box proposals via an ultralytics YOLO-World model."""

    def __init__(self, weights: str = "yolov8x-worldv2.pt", conf: float = 0.2):
        try:
            from ultralytics import YOLOWorld
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise ImportError(
                "YoloWorldDetector requires the 'ultralytics' package "
                "(pip install ot3d-bridge[models])"
            ) from exc
        self._model = YOLOWorld(weights)
        self.conf = conf

    def detect(self, image: np.ndarray, vocabulary: list[str]) -> list[BoxDetection]:
        self._model.set_classes(vocabulary)
        result = self._model.predict(image[..., ::-1], conf=self.conf, verbose=False)[0]
        out = []
        for box in result.boxes:
            x0, y0, x1, y1 = (float(v) for v in box.xyxy[0].tolist())
            out.append(
                BoxDetection(
                    bbox=(x0, y0, x1, y1),
                    score=float(box.conf[0]),
                    label=vocabulary[int(box.cls[0])],
                )
            )
        return out


class Sam2Masker:
    """Box-prompted masks via a SAM2 image predictor."""

    def __init__(self, model_id: str = "facebook/sam2-hiera-large"):
        try:
            import torch  # noqa: F401
            from sam2.sam2_image_predictor import SAM2ImagePredictor
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise ImportError(
                "Sam2Masker requires 'sam2' and 'torch' "
                "(pip install ot3d-bridge[models])"
            ) from exc
        self._predictor = SAM2ImagePredictor.from_pretrained(model_id)

    def segment(
        self, image: np.ndarray, boxes: list[BoxDetection]
    ) -> list[np.ndarray]:
        if not boxes:
            return []
        self._predictor.set_image(image)
        prompts = np.array([det.bbox for det in boxes], dtype=np.float32)
        masks, _, _ = self._predictor.predict(
            box=prompts, multimask_output=False
        )
        masks = np.asarray(masks)
        if masks.ndim == 4:  # (n, 1, H, W)
            masks = masks[:, 0]
        return [m.astype(bool) for m in masks]


class DinoFeatures:
    """Dense patch descriptors from a DINOv2 backbone."""

    def __init__(self, model_id: str = "facebook/dinov2-base"):
        try:
            import torch
            from transformers import AutoImageProcessor, AutoModel
        except ImportError as exc:  # pragma: no cover - optional dependency
            raise ImportError(
                "DinoFeatures requires 'transformers' and 'torch' "
                "(pip install ot3d-bridge[models])"
            ) from exc
        self._torch = torch
        self._processor = AutoImageProcessor.from_pretrained(model_id)
        self._model = AutoModel.from_pretrained(model_id).eval()

    def extract(self, image: np.ndarray) -> np.ndarray:
        torch = self._torch
        inputs = self._processor(images=image, return_tensors="pt")
        with torch.no_grad():
            out = self._model(**inputs).last_hidden_state[0]
        patches = out[1:]  # drop CLS
        side = int(np.sqrt(patches.shape[0]))
        grid = patches[: side * side].reshape(side, side, -1)
        return grid.float().cpu().numpy().astype(np.float32)


def build_models(kind: str) -> tuple[Detector, Masker, FeatureExtractor]:
    if kind == "stub":
        return StubDetector(), StubMasker(), StubFeatures()
    if kind == "real":
        return YoloWorldDetector(), Sam2Masker(), DinoFeatures()
    raise ValueError(f"unknown model set {kind!r}; use 'stub' or 'real'")
