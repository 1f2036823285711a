"""JSON / raw-float readers and writers for points, masks, density maps and scenes."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import DensityMap, RasterMask, RleRecord, Scene, as_points, rle_decode, rle_encode
from .errors import SizeMismatch


def dump_json(obj, path: str | Path) -> None:
    # Fixed key order and separators keep output byte-stable across runs.
    text = json.dumps(obj, sort_keys=True, indent=2)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text + "\n", encoding="utf-8")


def load_json(path: str | Path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def points_to_dict(points: np.ndarray, width: int, height: int) -> dict:
    return {
        "width": int(width),
        "height": int(height),
        "points": [[float(x), float(y)] for x, y in np.asarray(points, dtype=np.float64)],
    }


def write_points(path: str | Path, points: np.ndarray, width: int, height: int) -> None:
    dump_json(points_to_dict(points, width, height), path)


def read_points(path: str | Path) -> tuple[np.ndarray, int, int]:
    """Return ``(points, width, height)`` from a points file."""
    data = load_json(path)
    try:
        width, height = int(data["width"]), int(data["height"])
        pts = as_points(data["points"])
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed points file") from exc
    return pts, width, height


def masks_to_list(masks: Sequence[RasterMask]) -> list[dict]:
    return [rle_encode(m).to_dict() for m in masks]


def write_masks(path: str | Path, masks: Sequence[RasterMask]) -> None:
    dump_json(masks_to_list(masks), path)


def read_masks(path: str | Path, expect_size: Optional[tuple[int, int]] = None) -> list[RasterMask]:
    """Decode a masks file; ``expect_size`` is ``(height, width)`` when given."""
    data = load_json(path)
    if not isinstance(data, list):
        raise ValueError(f"{path}: masks file must hold a JSON array")
    masks = [rle_decode(RleRecord.from_dict(rec)) for rec in data]
    if expect_size is not None:
        for k, m in enumerate(masks):
            if m.shape != tuple(expect_size):
                raise SizeMismatch(f"{path}: mask {k} has shape {m.shape}, expected {tuple(expect_size)}")
    return masks


def _density_paths(path: str | Path) -> tuple[Path, Path]:
    p = Path(path)
    if p.suffix == ".bin":
        return p.with_suffix(".json"), p
    return p, p.with_suffix(".bin")


def write_density(path: str | Path, dmap: DensityMap) -> None:
    """Write ``<stem>.json`` (header) and ``<stem>.bin`` (little-endian float32, row-major)."""
    header, raw = _density_paths(path)
    dump_json({"width": dmap.width, "height": dmap.height}, header)
    raw.write_bytes(dmap.values.astype("<f4").tobytes(order="C"))


def read_density(path: str | Path) -> DensityMap:
    """Read a density map given either its header or its raw file."""
    header, raw = _density_paths(path)
    meta = load_json(header)
    width, height = int(meta["width"]), int(meta["height"])
    data = np.frombuffer(raw.read_bytes(), dtype="<f4")
    if data.size != width * height:
        raise SizeMismatch(f"{raw}: {data.size} floats, expected {width * height}")
    return DensityMap(width, height, data.reshape(height, width).astype(np.float32))


POINTS_FILE = "points.json"
MASKS_FILE = "masks.json"
DENSITY_FILE = "density.json"


def write_scene(directory: str | Path, scene: Scene, density: Optional[DensityMap] = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_points(d / POINTS_FILE, scene.points, scene.width, scene.height)
    if scene.gt_masks is not None:
        write_masks(d / MASKS_FILE, scene.gt_masks)
    if density is not None:
        write_density(d / DENSITY_FILE, density)


def read_scene(directory: str | Path) -> Scene:
    d = Path(directory)
    points, width, height = read_points(d / POINTS_FILE)
    masks = None
    if (d / MASKS_FILE).exists():
        masks = read_masks(d / MASKS_FILE, (height, width))
    scene = Scene(width, height, points, masks, image_id=d.name or "image")
    scene.validate()
    return scene
