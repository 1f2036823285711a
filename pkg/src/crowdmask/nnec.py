"""Nearest-neighbour exclusion circles and the mask operations built on them.

Every annotated point gets a circle whose radius stays strictly below the
distance to its nearest neighbour, clamped into ``[r_min, r_max]``. Circles
bound segmenter proposals; an empty bounded proposal falls back to the whole
circle. Overlaps left between instances are split by nearest centre.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .core import ExclusionCircle, Point2D, RasterMask, as_points
from .errors import EmptyPointSet, LengthMismatch, SizeMismatch

GRID_THRESHOLD = 2048


@dataclass(frozen=True)
class NnecParams:
    r_min: float = 5.0
    r_max: float = 200.0
    delta: float = 1.0
    bounded_mode: bool = False

    def __post_init__(self) -> None:
        if not (0 < self.r_min <= self.r_max):
            raise ValueError(f"need 0 < r_min <= r_max, got r_min={self.r_min}, r_max={self.r_max}")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")

    def radius_for(self, d: float) -> float:
        """Clamped radius for a nearest-neighbour distance ``d`` (inf if alone)."""
        if math.isinf(d):
            return float(self.r_max)
        raw = d / 2.0 - self.delta if self.bounded_mode else d - self.delta
        return float(min(max(raw, self.r_min), self.r_max))


def _distances(p: np.ndarray, others: np.ndarray) -> np.ndarray:
    # Single distance formula shared by the brute-force and grid paths so both
    # produce bit-identical minima.
    dx = others[..., 0] - p[..., 0]
    dy = others[..., 1] - p[..., 1]
    return np.sqrt(dx * dx + dy * dy)


def nn_distances_brute(points: np.ndarray) -> np.ndarray:
    """Nearest-other-point distance for every point by exhaustive comparison."""
    pts = as_points(points)
    n = len(pts)
    out = np.full(n, np.inf)
    chunk = max(1, 4_000_000 // max(n, 1))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        d = _distances(pts[start:stop, None, :], pts[None, :, :])
        d[np.arange(stop - start), np.arange(start, stop)] = np.inf
        out[start:stop] = d.min(axis=1)
    return out


def nn_distances_grid(points: np.ndarray) -> np.ndarray:
    """Same result as :func:`nn_distances_brute` via uniform-grid bucketing."""
    pts = as_points(points)
    n = len(pts)
    out = np.full(n, np.inf)
    if n < 2:
        return out
    lo = pts.min(axis=0)
    extent = pts.max(axis=0) - lo
    area = max(extent[0], 1.0) * max(extent[1], 1.0)
    cell = max(math.sqrt(area / n), 1e-9)
    cells = np.floor((pts - lo) / cell).astype(np.int64)
    ncx, ncy = int(cells[:, 0].max()) + 1, int(cells[:, 1].max()) + 1

    order = np.lexsort((cells[:, 1], cells[:, 0]))
    keys = cells[order, 0] * ncy + cells[order, 1]
    uniq, starts = np.unique(keys, return_index=True)
    ends = np.append(starts[1:], len(keys))
    buckets = {int(k): order[s:e] for k, s, e in zip(uniq, starts, ends)}

    max_ring = max(ncx, ncy)
    for i in range(n):
        cx, cy = int(cells[i, 0]), int(cells[i, 1])
        best = np.inf
        for k in range(max_ring + 1):
            members = []
            for gx in range(cx - k, cx + k + 1):
                if gx < 0 or gx >= ncx:
                    continue
                if abs(gx - cx) == k:
                    ys = range(cy - k, cy + k + 1)
                else:
                    ys = (cy - k, cy + k)
                for gy in ys:
                    if 0 <= gy < ncy:
                        b = buckets.get(gx * ncy + gy)
                        if b is not None:
                            members.append(b)
            if members:
                idx = np.concatenate(members)
                idx = idx[idx != i]
                if idx.size:
                    best = min(best, float(_distances(pts[i], pts[idx]).min()))
            # Unvisited points are at least k cells away; keep a margin for
            # floor() rounding at cell borders.
            if best <= (k - 0.01) * cell:
                break
        out[i] = best
    return out


def nn_distances(points: np.ndarray) -> np.ndarray:
    pts = as_points(points)
    if len(pts) > GRID_THRESHOLD:
        return nn_distances_grid(pts)
    return nn_distances_brute(pts)


def nnec_radius(points, i: int, params: NnecParams = NnecParams()) -> ExclusionCircle:
    pts = as_points(points)
    if len(pts) == 0:
        raise EmptyPointSet("no points")
    if not 0 <= i < len(pts):
        raise IndexError(f"point index {i} out of range for {len(pts)} points")
    d = _distances(pts[i], np.delete(pts, i, axis=0))
    nearest = float(d.min()) if d.size else math.inf
    return ExclusionCircle(Point2D(float(pts[i, 0]), float(pts[i, 1])), params.radius_for(nearest))


def all_radii(points, params: NnecParams = NnecParams()) -> list[ExclusionCircle]:
    pts = as_points(points)
    if len(pts) == 0:
        raise EmptyPointSet("no points")
    dists = nn_distances(pts)
    return [
        ExclusionCircle(Point2D(float(x), float(y)), params.radius_for(float(d)))
        for (x, y), d in zip(pts, dists)
    ]


def rasterize_circle(circle: ExclusionCircle, width: int, height: int) -> RasterMask:
    """Pixels whose centres lie within the circle, clipped to the image."""
    if width <= 0 or height <= 0:
        raise ValueError("image dimensions must be positive")
    bits = np.zeros((height, width), dtype=bool)
    cx, cy = circle.center
    r = float(circle.radius)
    c0 = max(0, int(math.floor(cx - r - 0.5)))
    c1 = min(width, int(math.ceil(cx + r + 0.5)) + 1)
    r0 = max(0, int(math.floor(cy - r - 0.5)))
    r1 = min(height, int(math.ceil(cy + r + 0.5)) + 1)
    if c0 < c1 and r0 < r1:
        dx = np.arange(c0, c1, dtype=np.float64) + 0.5 - cx
        dy = np.arange(r0, r1, dtype=np.float64) + 0.5 - cy
        bits[r0:r1, c0:c1] = dx[None, :] ** 2 + dy[:, None] ** 2 <= r * r
    return RasterMask(bits)


def constrain_flagged(
    proposal: Optional[RasterMask], circle: ExclusionCircle, width: int, height: int
) -> tuple[RasterMask, bool]:
    """Like :func:`constrain`, also reporting whether the circle fallback was taken."""
    disc = rasterize_circle(circle, width, height)
    if proposal is None:
        return disc, True
    if proposal.shape != (height, width):
        raise SizeMismatch(f"proposal shape {proposal.shape} != {(height, width)}")
    inter = proposal & disc
    if inter.is_empty():
        return disc, True
    return inter, False


def constrain(
    proposal: Optional[RasterMask], circle: ExclusionCircle, width: int, height: int
) -> RasterMask:
    """Bound ``proposal`` by ``circle``; a missing or disjoint proposal yields the whole circle."""
    return constrain_flagged(proposal, circle, width, height)[0]


def resolve_overlaps(masks: Sequence[RasterMask], centers) -> list[RasterMask]:
    """Make masks pairwise disjoint.

    A pixel claimed by several masks goes to the claimant whose centre is
    nearest the pixel centre (ties to the lowest index); uncontested pixels
    are kept as they are.
    """
    pts = as_points(centers) if len(centers) else np.zeros((0, 2))
    if len(masks) != len(pts):
        raise LengthMismatch(f"{len(masks)} masks but {len(pts)} centers")
    if not masks:
        return []
    shape = masks[0].shape
    for m in masks:
        if m.shape != shape:
            raise SizeMismatch("masks must share one shape")

    count = np.zeros(shape, dtype=np.int32)
    for m in masks:
        count += m.bits
    contested = count > 1
    if not contested.any():
        return list(masks)

    rows, cols = np.nonzero(contested)
    px = cols.astype(np.float64) + 0.5
    py = rows.astype(np.float64) + 0.5
    best = np.full(rows.size, np.inf)
    owner = np.full(rows.size, -1, dtype=np.int64)
    for k, m in enumerate(masks):
        claims = m.bits[rows, cols]
        if not claims.any():
            continue
        d2 = (px - pts[k, 0]) ** 2 + (py - pts[k, 1]) ** 2
        take = claims & (d2 < best)
        best[take] = d2[take]
        owner[take] = k

    out = []
    for k, m in enumerate(masks):
        lose = m.bits[rows, cols] & (owner != k)
        if not lose.any():
            out.append(m)
            continue
        bits = m.bits.copy()
        bits[rows[lose], cols[lose]] = False
        out.append(RasterMask(bits))
    return out
