"""Point prompts to disjoint instance masks.

For each prompt: query the segmenter, bound the proposal by the prompt's
exclusion circle (falling back to the circle when nothing usable comes back),
then split contested pixels between instances.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ExclusionCircle, RasterMask, Rng, Scene, as_points, check_in_bounds
from .errors import EmptyPointSet
from .nnec import NnecParams, all_radii, constrain_flagged, resolve_overlaps
from .segmenter import Segmenter


@dataclass
class DpmoResult:
    masks: list[RasterMask]
    circles: list[ExclusionCircle]
    fallback_flags: list[bool]

    def __len__(self) -> int:
        return len(self.masks)


def segment_stream(seed: int, index: int) -> Rng:
    return Rng.for_entity(seed, f"segment/{index}")


def _ensure_nonempty(resolved: list[RasterMask], constrained: list[RasterMask], prompts: np.ndarray) -> list[RasterMask]:
    # A mask can lose every pixel to nearer centres when its proposal lies
    # away from its own prompt. Hand it back its claimed pixel nearest the
    # prompt, unless that would empty the current owner.
    out = list(resolved)
    for i, m in enumerate(out):
        if not m.is_empty() or constrained[i].is_empty():
            continue
        rows, cols = np.nonzero(constrained[i].bits)
        d2 = (cols + 0.5 - prompts[i, 0]) ** 2 + (rows + 0.5 - prompts[i, 1]) ** 2
        k = int(np.argmin(d2))
        r, c = rows[k], cols[k]
        for j, other in enumerate(out):
            if j != i and other.bits[r, c]:
                if other.population > 1:
                    bits = other.bits.copy()
                    bits[r, c] = False
                    out[j] = RasterMask(bits)
                    mine = np.zeros_like(bits)
                    mine[r, c] = True
                    out[i] = RasterMask(mine)
                break
    return out


def finalize_masks(constrained: list[RasterMask], prompts: np.ndarray) -> list[RasterMask]:
    return _ensure_nonempty(resolve_overlaps(constrained, prompts), constrained, prompts)


class DpmoContext:
    """DPMO run that can cheaply re-run with one prompt moved.

    Proposals only depend on a prompt's position and its per-index stream, and
    circles only change where nearest-neighbour distances change, so
    :meth:`substitute` recomputes just those pieces. Results equal a fresh
    :func:`run_dpmo` on the modified prompt list.
    """

    def __init__(
        self,
        prompts,
        scene: Scene,
        backend: Segmenter,
        params: NnecParams = NnecParams(),
        seed: int = 0,
        jobs: int = 1,
    ):
        pts = as_points(prompts)
        if len(pts) == 0:
            raise EmptyPointSet("no prompts")
        check_in_bounds(pts, scene.width, scene.height)
        self.prompts = pts
        self.scene = scene
        self.backend = backend
        self.params = params
        self.seed = int(seed)
        self.circles = all_radii(pts, params)

        def one(i: int):
            proposal = backend.segment(pts[i], scene, segment_stream(self.seed, i))
            mask, flag = constrain_flagged(proposal, self.circles[i], scene.width, scene.height)
            return proposal, mask, flag

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                parts = list(pool.map(one, range(len(pts))))
        else:
            parts = [one(i) for i in range(len(pts))]
        self.proposals: list[Optional[RasterMask]] = [p[0] for p in parts]
        self.constrained = [p[1] for p in parts]
        self.flags = [p[2] for p in parts]
        self.result = DpmoResult(finalize_masks(self.constrained, pts), list(self.circles), list(self.flags))

    def substitute(self, index: int, point) -> DpmoResult:
        point = np.asarray(point, dtype=np.float64)
        if np.array_equal(point, self.prompts[index]):
            return self.result
        scene = self.scene
        pts = self.prompts.copy()
        pts[index] = point
        check_in_bounds(pts[index : index + 1], scene.width, scene.height)
        circles = all_radii(pts, self.params)
        constrained = list(self.constrained)
        flags = list(self.flags)
        for j, circle in enumerate(circles):
            if j == index:
                proposal = self.backend.segment(pts[j], scene, segment_stream(self.seed, j))
            elif circle != self.circles[j]:
                proposal = self.proposals[j]
            else:
                continue
            constrained[j], flags[j] = constrain_flagged(proposal, circle, scene.width, scene.height)
        return DpmoResult(finalize_masks(constrained, pts), circles, flags)


def run_dpmo(
    prompts,
    scene: Scene,
    backend: Segmenter,
    params: NnecParams = NnecParams(),
    seed: int = 0,
    jobs: int = 1,
) -> DpmoResult:
    """One disjoint, non-empty mask per prompt; deterministic in ``seed``."""
    return DpmoContext(prompts, scene, backend, params, seed, jobs).result
