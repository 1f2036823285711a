"""Static PNG overlays of instance masks and annotation points."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .core import RasterMask, as_points, fnv1a64, pixel_of

BACKGROUND = (0, 0, 0)
POINT_COLOR = (255, 255, 255)


def mask_color(index: int) -> tuple[int, int, int]:
    """Deterministic colour for mask ``index``; channels stay in [48, 239]."""
    h = fnv1a64(f"mask/{index}")
    return tuple(48 + ((h >> shift) & 0xFF) % 192 for shift in (0, 8, 16))  # type: ignore[return-value]


def overlay_array(width: int, height: int, masks: Sequence[RasterMask], points=()) -> np.ndarray:
    img = np.zeros((height, width, 3), dtype=np.uint8)
    img[:] = BACKGROUND
    for k, m in enumerate(masks):
        if m.shape != (height, width):
            raise ValueError(f"mask {k} has shape {m.shape}, expected {(height, width)}")
        img[m.bits] = mask_color(k)
    pts = as_points(points) if len(points) else np.zeros((0, 2))
    for p in pts:
        col, row = pixel_of(p)
        for dc, dr in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)):
            c, r = col + dc, row + dr
            if 0 <= c < width and 0 <= r < height:
                img[r, c] = POINT_COLOR
    return img


def render_overlay(width: int, height: int, masks: Sequence[RasterMask], points, out_path: str | Path) -> Path:
    """Write a lossless PNG overlay; identical inputs give identical bytes."""
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(overlay_array(width, height, masks, points), mode="RGB").save(out, format="PNG")
    return out
