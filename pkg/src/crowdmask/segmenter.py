"""Prompt-to-mask backends standing in for a promptable segmentation network.

``CircleSegmenter`` returns a fixed disc, ``OracleSegmenter`` returns a
corrupted copy of the ground-truth instance under the prompt, and
``FileSegmenter`` looks proposals up in a precomputed masks file.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .core import ExclusionCircle, Point2D, RasterMask, Rng, Scene, in_bounds, pixel_of
from .errors import MissingGroundTruth, OutOfBounds, SizeMismatch
from .nnec import rasterize_circle


def _check_prompt(prompt: Sequence[float], scene: Scene) -> None:
    if not in_bounds(prompt, scene.width, scene.height):
        raise OutOfBounds(
            f"prompt ({prompt[0]}, {prompt[1]}) outside {scene.width}x{scene.height} image"
        )


def chebyshev_offset(mask: np.ndarray, k: int) -> np.ndarray:
    """Dilate (k > 0) or erode (k < 0) by a square structuring element of radius |k|."""
    if k == 0:
        return mask.copy()
    size = 2 * abs(k) + 1
    if k > 0:
        return ndimage.binary_dilation(mask, structure=np.ones((size, size), dtype=bool))
    # Pixels outside the image count as foreground so clipped heads are not
    # eroded from the border side.
    return ndimage.binary_erosion(mask, structure=np.ones((size, size), dtype=bool), border_value=1)


class Segmenter:
    kind = "abstract"

    def segment(self, prompt: Sequence[float], scene: Scene, rng: Rng) -> Optional[RasterMask]:
        raise NotImplementedError


class CircleSegmenter(Segmenter):
    kind = "circle"

    def __init__(self, radius: float = 8.0):
        self.radius = float(radius)

    def segment(self, prompt, scene, rng):
        _check_prompt(prompt, scene)
        circle = ExclusionCircle(Point2D(float(prompt[0]), float(prompt[1])), self.radius)
        return rasterize_circle(circle, scene.width, scene.height)


class OracleSegmenter(Segmenter):
    """Ground-truth lookup with seeded boundary noise and random misses.

    Every call consumes exactly two uniforms from ``rng`` (miss draw, then
    offset draw), whatever the outcome, so streams stay aligned.
    """

    kind = "oracle"

    def __init__(self, noise: int = 2, p_miss: float = 0.05, r_max: float = 200.0):
        if noise < 0:
            raise ValueError("noise must be non-negative")
        if not 0.0 <= p_miss <= 1.0:
            raise ValueError("p_miss must lie in [0, 1]")
        self.noise = int(noise)
        self.p_miss = float(p_miss)
        self.search_radius = 2.0 * float(r_max)

    def _lookup(self, prompt, scene: Scene) -> Optional[int]:
        col, row = pixel_of(prompt)
        for k, m in enumerate(scene.gt_masks):
            if m.bits[row, col]:
                return k
        if len(scene.points) == 0:
            return None
        d = np.hypot(scene.points[:, 0] - prompt[0], scene.points[:, 1] - prompt[1])
        k = int(np.argmin(d))
        return k if d[k] <= self.search_radius else None

    def segment(self, prompt, scene, rng):
        _check_prompt(prompt, scene)
        if scene.gt_masks is None:
            raise MissingGroundTruth("oracle segmenter needs a scene with ground-truth masks")
        missed = rng.uniform() < self.p_miss
        offset = rng.randint(-self.noise, self.noise)
        if missed:
            return None
        k = self._lookup(prompt, scene)
        if k is None:
            return None
        return RasterMask(chebyshev_offset(scene.gt_masks[k].bits, offset))


class FileSegmenter(Segmenter):
    """Proposals loaded from disk, indexed by pixel ownership and centroid."""

    kind = "file"

    def __init__(self, records: Sequence[RasterMask], r_max: float = 200.0):
        self.records = list(records)
        self.search_radius = 2.0 * float(r_max)
        if self.records:
            shape = self.records[0].shape
            if any(r.shape != shape for r in self.records):
                raise SizeMismatch("proposal records must share one size")
            # Lowest record index covering each pixel, -1 where none does.
            owner = np.full(shape, -1, dtype=np.int64)
            for k in range(len(self.records) - 1, -1, -1):
                owner[self.records[k].bits] = k
            self._owner = owner
            cents = [r.centroid() for r in self.records]
            self._centroids = np.array(
                [c if c is not None else (np.nan, np.nan) for c in cents], dtype=np.float64
            )
        else:
            self._owner = None
            self._centroids = np.zeros((0, 2))

    def segment(self, prompt, scene, rng):
        _check_prompt(prompt, scene)
        if not self.records:
            return None
        if self._owner.shape != (scene.height, scene.width):
            raise SizeMismatch(
                f"proposals are {self._owner.shape}, scene is {(scene.height, scene.width)}"
            )
        col, row = pixel_of(prompt)
        k = int(self._owner[row, col])
        if k >= 0:
            return self.records[k]
        d = np.hypot(self._centroids[:, 0] - prompt[0], self._centroids[:, 1] - prompt[1])
        d = np.where(np.isnan(d), np.inf, d)
        k = int(np.argmin(d))
        return self.records[k] if d[k] <= self.search_radius else None


def make_segmenter(
    kind: str,
    *,
    noise: int = 2,
    p_miss: float = 0.05,
    r_max: float = 200.0,
    proposals: Optional[Sequence[RasterMask]] = None,
    radius: float = 8.0,
) -> Segmenter:
    if kind == "circle":
        return CircleSegmenter(radius)
    if kind == "oracle":
        return OracleSegmenter(noise=noise, p_miss=p_miss, r_max=r_max)
    if kind == "file":
        if proposals is None:
            raise ValueError("file segmenter needs proposal records")
        return FileSegmenter(proposals, r_max=r_max)
    raise ValueError(f"unknown segmenter kind {kind!r}")


def segment(backend: Segmenter, prompt, scene: Scene, rng: Rng) -> Optional[RasterMask]:
    return backend.segment(prompt, scene, rng)
