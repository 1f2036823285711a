"""Seeded synthetic crowd scenes: elliptical heads, point annotations, disjoint masks."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DensityMap, RasterMask, Rng, Scene, as_points, clamp_to_bounds
from .errors import MissingGroundTruth, PlacementFailure
from .nnec import NnecParams, nn_distances, resolve_overlaps

REGIMES = ("sparse", "dense", "mixed")

# Chance that a new head is proposed right next to an existing one.
_CLUSTER_PROB = {"sparse": 0.0, "dense": 0.8, "mixed": 0.4}
# Rough image area per head used when no image size is given.
_AREA_PER_HEAD = {"sparse": 4000.0, "dense": 160.0, "mixed": 600.0}
_DEFAULTS = {
    # regime: (head_radius_range, min_center_spacing)
    "sparse": ((6.0, 10.0), 40.0),
    "dense": ((4.0, 7.0), 6.0),
    "mixed": ((4.0, 8.0), 7.0),
}


@dataclass(frozen=True)
class SynthConfig:
    width: int = 256
    height: int = 256
    n_heads: int = 12
    density_regime: str = "sparse"
    head_radius_range: tuple[float, float] = (6.0, 10.0)
    min_center_spacing: float = 40.0
    seed: int = 0
    nnec: NnecParams = NnecParams()

    def __post_init__(self) -> None:
        if self.density_regime not in REGIMES:
            raise ValueError(f"density_regime must be one of {REGIMES}")
        lo, hi = self.head_radius_range
        if not 1.0 <= lo <= hi:
            raise ValueError("head radius range must satisfy 1 <= min <= max")
        if self.n_heads < 0:
            raise ValueError("n_heads must be non-negative")
        if self.min_center_spacing < 2.0:
            raise ValueError("min_center_spacing must be at least 2 px")
        if self.width <= 2 * hi or self.height <= 2 * hi:
            raise ValueError("image too small for the head radius range")
        if self.density_regime == "sparse":
            need = self.nnec.r_min + self.nnec.delta + hi
            if self.min_center_spacing <= need:
                raise ValueError(f"sparse scenes need spacing > {need}")
        if self.density_regime == "dense" and self.min_center_spacing >= 2 * self.nnec.r_min:
            raise ValueError(f"dense scenes need spacing < {2 * self.nnec.r_min}")

    @classmethod
    def for_regime(
        cls,
        regime: str,
        n_heads: int,
        seed: int = 0,
        width: Optional[int] = None,
        height: Optional[int] = None,
        **overrides,
    ) -> "SynthConfig":
        """Regime defaults with the image sized to the head count unless given."""
        if regime not in REGIMES:
            raise ValueError(f"density_regime must be one of {REGIMES}")
        radii, spacing = _DEFAULTS[regime]
        side = max(64, int(math.ceil(math.sqrt(max(n_heads, 1) * _AREA_PER_HEAD[regime]))))
        kwargs = dict(
            width=width or side,
            height=height or side,
            n_heads=n_heads,
            density_regime=regime,
            head_radius_range=radii,
            min_center_spacing=spacing,
            seed=seed,
        )
        kwargs.update(overrides)
        return cls(**kwargs)


def rasterize_ellipse(center, a: float, b: float, angle: float, width: int, height: int) -> np.ndarray:
    """Pixel-centre test against an ellipse with semi-axes ``a``, ``b`` rotated by ``angle``."""
    cx, cy = center
    reach = max(a, b)
    c0, c1 = max(0, int(math.floor(cx - reach - 1))), min(width, int(math.ceil(cx + reach + 1)))
    r0, r1 = max(0, int(math.floor(cy - reach - 1))), min(height, int(math.ceil(cy + reach + 1)))
    bits = np.zeros((height, width), dtype=bool)
    if c0 >= c1 or r0 >= r1:
        return bits
    dx = np.arange(c0, c1) + 0.5 - cx
    dy = np.arange(r0, r1) + 0.5 - cy
    ca, sa = math.cos(angle), math.sin(angle)
    u = dx[None, :] * ca + dy[:, None] * sa
    v = -dx[None, :] * sa + dy[:, None] * ca
    bits[r0:r1, c0:c1] = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return bits


def _place_centers(cfg: SynthConfig, rng: Rng) -> np.ndarray:
    n = cfg.n_heads
    margin = cfg.head_radius_range[1]
    spacing = cfg.min_center_spacing
    cluster_max = max(spacing, 0.95 * 2 * cfg.nnec.r_min)
    p_cluster = _CLUSTER_PROB[cfg.density_regime]
    x_lo, x_hi = margin, cfg.width - margin
    y_lo, y_hi = margin, cfg.height - margin
    centers: list[tuple[float, float]] = []
    attempts = 0
    while len(centers) < n:
        if attempts >= 10 * n:
            raise PlacementFailure(
                f"placed {len(centers)} of {n} heads after {attempts} attempts; "
                "enlarge the image or reduce spacing"
            )
        attempts += 1
        if centers and rng.uniform() < p_cluster:
            ax, ay = centers[rng.randint(0, len(centers) - 1)]
            theta = rng.uniform_range(0.0, 2.0 * math.pi)
            dist = rng.uniform_range(spacing, cluster_max)
            x, y = ax + dist * math.cos(theta), ay + dist * math.sin(theta)
        else:
            x, y = rng.uniform_range(x_lo, x_hi), rng.uniform_range(y_lo, y_hi)
        if not (x_lo <= x < x_hi and y_lo <= y < y_hi):
            continue
        if centers:
            arr = np.asarray(centers)
            if np.min(np.hypot(arr[:, 0] - x, arr[:, 1] - y)) < spacing:
                continue
        centers.append((x, y))
    return np.asarray(centers, dtype=np.float64).reshape(-1, 2)


def generate_scene(cfg: SynthConfig, image_id: Optional[str] = None) -> Scene:
    rng = Rng.for_entity(cfg.seed, "synth")
    centers = _place_centers(cfg, rng)
    lo, hi = cfg.head_radius_range
    heads = []
    for x, y in centers:
        a = rng.uniform_range(lo, hi)
        b = min(max(a * rng.uniform_range(0.7, 1.3), lo), hi)
        angle = rng.uniform_range(0.0, math.pi)
        heads.append(RasterMask(rasterize_ellipse((x, y), a, b, angle, cfg.width, cfg.height)))
    masks = resolve_overlaps(heads, centers) if heads else []
    scene = Scene(cfg.width, cfg.height, centers, masks, image_id or f"synth-{cfg.density_regime}-{cfg.seed}")
    if cfg.density_regime == "dense" and len(centers) >= 2:
        d = nn_distances(centers)
        if np.mean(d < 2 * cfg.nnec.r_min) < 0.1:
            raise PlacementFailure("dense scene ended up with too few close neighbours")
    return scene


def perturb_points(points, sigma: float, rng: Rng, width: int, height: int) -> np.ndarray:
    """Add N(0, sigma) to each coordinate (x then y per point) and clamp into the image."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    pts = as_points(points)
    out = pts.copy()
    for i in range(len(out)):
        out[i, 0] = rng.gaussian(pts[i, 0], sigma)
        out[i, 1] = rng.gaussian(pts[i, 1], sigma)
    return clamp_to_bounds(out, width, height)


def make_density_map(scene: Scene, mode: str = "perfect") -> DensityMap:
    if scene.gt_masks is None:
        raise MissingGroundTruth("density maps need ground-truth masks")
    values = np.zeros((scene.height, scene.width), dtype=np.float64)
    if mode == "perfect":
        for m in scene.gt_masks:
            if m.population:
                values[m.bits] = 1.0 / m.population
    elif mode == "uniform_mass":
        values[:] = len(scene.gt_masks) / float(scene.width * scene.height)
    else:
        raise ValueError(f"unknown density mode {mode!r}")
    return DensityMap(scene.width, scene.height, values)
