"""Shared domain types, the run-length mask codec and the seeded RNG."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import LengthMismatch, OutOfBounds, SizeMismatch

MASK64 = (1 << 64) - 1


class Point2D(NamedTuple):
    """Continuous image coordinate in pixels, origin at the top-left corner."""

    x: float
    y: float


def as_points(points: Iterable[Sequence[float]] | np.ndarray) -> np.ndarray:
    """Return ``points`` as a float64 array of shape (n, 2)."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) point array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("points must be finite")
    return arr


def clamp_to_bounds(points: np.ndarray, width: int, height: int) -> np.ndarray:
    """Clamp points into the half-open box [0, width) x [0, height)."""
    out = np.array(points, dtype=np.float64, copy=True)
    out[..., 0] = np.clip(out[..., 0], 0.0, np.nextafter(float(width), 0.0))
    out[..., 1] = np.clip(out[..., 1], 0.0, np.nextafter(float(height), 0.0))
    return out


def in_bounds(point: Sequence[float], width: int, height: int) -> bool:
    x, y = float(point[0]), float(point[1])
    return 0.0 <= x < width and 0.0 <= y < height


def check_in_bounds(points: np.ndarray, width: int, height: int) -> None:
    for k, p in enumerate(points):
        if not in_bounds(p, width, height):
            raise OutOfBounds(f"point {k} at ({p[0]}, {p[1]}) outside {width}x{height} image")


def pixel_of(point: Sequence[float]) -> tuple[int, int]:
    """(col, row) of the pixel containing ``point``."""
    return int(math.floor(point[0])), int(math.floor(point[1]))


class RasterMask:
    """Immutable binary pixel set over a ``height x width`` grid.

    Pixel (col, row) lives at ``bits[row, col]``; the row-major flat index is
    ``row * width + col``.
    """

    __slots__ = ("bits", "_population")

    def __init__(self, bits: np.ndarray):
        arr = np.array(bits, dtype=bool, copy=True)
        if arr.ndim != 2 or arr.shape[0] <= 0 or arr.shape[1] <= 0:
            raise ValueError(f"mask must be a non-empty 2-D grid, got shape {arr.shape}")
        arr.setflags(write=False)
        self.bits = arr
        self._population: Optional[int] = None

    @classmethod
    def empty(cls, width: int, height: int) -> "RasterMask":
        return cls(np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def population(self) -> int:
        if self._population is None:
            self._population = int(np.count_nonzero(self.bits))
        return self._population

    def is_empty(self) -> bool:
        return self.population == 0

    def contains(self, point: Sequence[float]) -> bool:
        """True when the pixel holding ``point`` is set (false outside the grid)."""
        col, row = pixel_of(point)
        if 0 <= col < self.width and 0 <= row < self.height:
            return bool(self.bits[row, col])
        return False

    def centroid(self) -> Optional[Point2D]:
        """Mean pixel-center coordinate, or None for an empty mask."""
        rows, cols = np.nonzero(self.bits)
        if rows.size == 0:
            return None
        return Point2D(float(cols.mean() + 0.5), float(rows.mean() + 0.5))

    def _check_same(self, other: "RasterMask") -> None:
        if self.shape != other.shape:
            raise SizeMismatch(f"mask shapes differ: {self.shape} vs {other.shape}")

    def __and__(self, other: "RasterMask") -> "RasterMask":
        self._check_same(other)
        return RasterMask(self.bits & other.bits)

    def __or__(self, other: "RasterMask") -> "RasterMask":
        self._check_same(other)
        return RasterMask(self.bits | other.bits)

    def intersection_count(self, other: "RasterMask") -> int:
        self._check_same(other)
        return int(np.count_nonzero(self.bits & other.bits))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RasterMask):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self.bits, other.bits))

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"RasterMask({self.width}x{self.height}, population={self.population})"


@dataclass(frozen=True)
class RleRecord:
    """Row-major run lengths, starting with a (possibly empty) run of zeros."""

    size: tuple[int, int]  # (height, width)
    counts: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"size": [int(self.size[0]), int(self.size[1])], "counts": [int(c) for c in self.counts]}

    @classmethod
    def from_dict(cls, data: dict) -> "RleRecord":
        try:
            h, w = data["size"]
            counts = data["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed RLE record: {data!r}") from exc
        return cls((int(h), int(w)), tuple(int(c) for c in counts))


def rle_encode(mask: RasterMask) -> RleRecord:
    flat = mask.bits.ravel()
    if flat.size == 0:
        return RleRecord(mask.shape, ())
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return RleRecord((mask.height, mask.width), tuple(int(r) for r in runs))


def rle_decode(record: RleRecord) -> RasterMask:
    h, w = record.size
    counts = np.asarray(record.counts, dtype=np.int64)
    if h <= 0 or w <= 0:
        raise SizeMismatch(f"invalid mask size {record.size}")
    if np.any(counts < 0):
        raise ValueError("RLE counts must be non-negative")
    if int(counts.sum()) != h * w:
        raise SizeMismatch(f"RLE counts sum to {int(counts.sum())}, expected {h * w}")
    values = np.arange(counts.size) % 2 == 1
    flat = np.repeat(values, counts)
    return RasterMask(flat.reshape(h, w))


@dataclass(frozen=True)
class ExclusionCircle:
    center: Point2D
    radius: float


@dataclass
class Scene:
    """One image worth of annotations; ``gt_masks[k]`` belongs to ``points[k]``."""

    width: int
    height: int
    points: np.ndarray
    gt_masks: Optional[list[RasterMask]] = None
    image_id: str = "image"

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("scene dimensions must be positive")
        self.points = as_points(self.points)

    def validate(self) -> None:
        check_in_bounds(self.points, self.width, self.height)
        if self.gt_masks is None:
            return
        if len(self.gt_masks) != len(self.points):
            raise LengthMismatch(
                f"{len(self.gt_masks)} masks for {len(self.points)} points"
            )
        claimed = np.zeros((self.height, self.width), dtype=np.int32)
        for m in self.gt_masks:
            if m.shape != (self.height, self.width):
                raise SizeMismatch(f"mask shape {m.shape} != scene {(self.height, self.width)}")
            claimed += m.bits
        if claimed.max(initial=0) > 1:
            raise ValueError("ground-truth masks overlap")

    def __len__(self) -> int:
        return len(self.points)


@dataclass
class DensityMap:
    width: int
    height: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float32)
        if vals.shape != (self.height, self.width):
            raise SizeMismatch(f"density grid {vals.shape} != {(self.height, self.width)}")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("density values must be finite and non-negative")
        self.values = vals


# -- deterministic randomness -------------------------------------------------

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


def fnv1a64(text: str) -> int:
    h = FNV64_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV64_PRIME) & MASK64
    return h


def derive_seed(master_seed: int, entity_id: str) -> int:
    """Seed of the independent stream for ``entity_id`` under ``master_seed``."""
    return (int(master_seed) & MASK64) ^ fnv1a64(entity_id)


class Rng:
    """SplitMix64 generator with Box-Muller normals.

    Portable by construction: every output is a pure function of the seed and
    the call sequence.
    """

    __slots__ = ("state", "_spare")

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64
        self._spare: Optional[float] = None

    @classmethod
    def for_entity(cls, master_seed: int, entity_id: str) -> "Rng":
        return cls(derive_seed(master_seed, entity_id))

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) / 9007199254740992.0

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randint(self, lo: int, hi: int) -> int:
        """Integer uniformly drawn from the closed range [lo, hi]."""
        if hi < lo:
            raise ValueError("empty integer range")
        return lo + min(int(self.uniform() * (hi - lo + 1)), hi - lo)

    def gaussian(self, mean: float = 0.0, sigma: float = 1.0) -> float:
        # Box-Muller: cosine branch returned first, sine branch cached for the next call.
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self._spare is not None:
            z = self._spare
            self._spare = None
        else:
            u1 = self.uniform()
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(1.0 - u1))
            theta = 2.0 * math.pi * u2
            z = r * math.cos(theta)
            self._spare = r * math.sin(theta)
        return mean + sigma * z


def rng_next_uniform(rng: Rng) -> float:
    return rng.uniform()


def rng_next_gaussian(rng: Rng, mean: float, sigma: float) -> float:
    return rng.gaussian(mean, sigma)
