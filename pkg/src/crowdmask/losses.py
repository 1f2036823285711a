"""Mask-supervised counting losses.

``density_mask_loss`` asks every instance mask of a density map to integrate
to one and the background to zero. The matchers pair predicted head points
with annotated ones, admitting a pair only when the prediction falls inside
the annotation's mask; annotations whose mask holds no prediction borrow the
nearest background prediction instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import DensityMap, RasterMask, as_points, pixel_of
from .errors import LengthMismatch, NoPredictions, SizeMismatch


def _check_masks(dmap: DensityMap, masks: Sequence[RasterMask]) -> None:
    for m in masks:
        if m.shape != (dmap.height, dmap.width):
            raise SizeMismatch(f"mask shape {m.shape} != density map {(dmap.height, dmap.width)}")


def _sums(dmap: DensityMap, masks: Sequence[RasterMask]):
    vals = dmap.values.astype(np.float64)
    fg = np.zeros(vals.shape, dtype=bool)
    sums = np.empty(len(masks))
    for i, m in enumerate(masks):
        sums[i] = float(vals[m.bits].sum())
        fg |= m.bits
    bg = float(vals[~fg].sum())
    return vals, fg, sums, bg


def density_mask_loss(dmap: DensityMap, masks: Sequence[RasterMask]) -> float:
    """Mean squared deviation of per-mask mass from 1, plus squared background mass.

    With no masks the loss is the squared total mass.
    """
    _check_masks(dmap, masks)
    _, _, sums, bg = _sums(dmap, masks)
    mask_term = float(np.mean((sums - 1.0) ** 2)) if len(masks) else 0.0
    return mask_term + bg * bg


def density_mask_loss_grad(dmap: DensityMap, masks: Sequence[RasterMask]) -> np.ndarray:
    """Gradient of :func:`density_mask_loss` with respect to every pixel value."""
    _check_masks(dmap, masks)
    _, fg, sums, bg = _sums(dmap, masks)
    grad = np.zeros((dmap.height, dmap.width))
    n = len(masks)
    for i, m in enumerate(masks):
        grad[m.bits] = 2.0 * (sums[i] - 1.0) / n
    grad[~fg] = 2.0 * bg
    return grad


@dataclass
class MatchingProblem:
    pred_points: np.ndarray
    gt_points: np.ndarray
    masks: list[RasterMask]

    def __post_init__(self) -> None:
        self.pred_points = as_points(self.pred_points)
        self.gt_points = as_points(self.gt_points)
        if len(self.masks) != len(self.gt_points):
            raise LengthMismatch(f"{len(self.masks)} masks for {len(self.gt_points)} ground-truth points")

    @property
    def m(self) -> int:
        return len(self.pred_points)

    @property
    def n(self) -> int:
        return len(self.gt_points)

    def owners(self) -> np.ndarray:
        """Index of the mask holding each prediction's pixel, or -1."""
        out = np.full(self.m, -1, dtype=np.int64)
        for i, p in enumerate(self.pred_points):
            col, row = pixel_of(p)
            for j, mask in enumerate(self.masks):
                if 0 <= row < mask.height and 0 <= col < mask.width and mask.bits[row, col]:
                    out[i] = j
                    break
        return out

    def distances(self) -> np.ndarray:
        u, v = self.pred_points, self.gt_points
        return np.hypot(u[:, None, 0] - v[None, :, 0], u[:, None, 1] - v[None, :, 1])

    def cost_matrix(self) -> np.ndarray:
        """Distance where the prediction lies in the mask, +inf elsewhere.

        Columns whose mask holds no prediction accept any prediction at its
        plain distance (background fallback).
        """
        d = self.distances()
        owner = self.owners()
        inside = owner[:, None] == np.arange(self.n)[None, :]
        empty = ~inside.any(axis=0)
        return np.where(inside | empty[None, :], d, np.inf)


@dataclass
class Matching:
    pairs: list[tuple[int, int]]
    unmatched_pred: list[int]
    unmatched_gt: list[int]
    total_cost: float
    distances: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "pairs": [[int(i), int(j)] for i, j in self.pairs],
            "unmatched_pred": [int(i) for i in self.unmatched_pred],
            "unmatched_gt": [int(j) for j in self.unmatched_gt],
            "total_cost": float(self.total_cost),
        }


def _build_matching(problem: MatchingProblem, pairs: list[tuple[int, int]]) -> Matching:
    pairs = sorted(pairs, key=lambda p: (p[1], p[0]))
    d = problem.distances() if pairs else np.zeros((problem.m, problem.n))
    dists = [float(d[i, j]) for i, j in pairs]
    used_p = {i for i, _ in pairs}
    used_g = {j for _, j in pairs}
    return Matching(
        pairs=pairs,
        unmatched_pred=[i for i in range(problem.m) if i not in used_p],
        unmatched_gt=[j for j in range(problem.n) if j not in used_g],
        total_cost=math.fsum(dists),
        distances=dists,
    )


def match_three_case(problem: MatchingProblem) -> Matching:
    """Greedy per-mask matching.

    One prediction inside a mask is paired with it; several inside keep the
    one nearest the annotation and release the rest to the background; masks
    left empty then take, in ascending order, the nearest background
    prediction still available.
    """
    if problem.m == 0 and problem.n > 0:
        raise NoPredictions("no predicted points to match")
    d = problem.distances()
    owner = problem.owners()
    pairs = []
    matched_pred = set()
    empty_masks = []
    for j in range(problem.n):
        inside = np.flatnonzero(owner == j)
        if inside.size == 0:
            empty_masks.append(j)
            continue
        i = int(inside[np.argmin(d[inside, j])])
        pairs.append((i, j))
        matched_pred.add(i)
    background = [i for i in range(problem.m) if i not in matched_pred]
    for j in empty_masks:
        if not background:
            break
        k = int(np.argmin([d[i, j] for i in background]))
        pairs.append((background.pop(k), j))
    return _build_matching(problem, pairs)


def match_exact(problem: MatchingProblem) -> Matching:
    """Minimum-cost assignment under the mask-restricted cost matrix.

    The solver first maximises the number of finite-cost pairs, then
    minimises their total distance.
    """
    if problem.m == 0 and problem.n > 0:
        raise NoPredictions("no predicted points to match")
    if problem.m == 0 or problem.n == 0:
        return _build_matching(problem, [])
    cost = problem.cost_matrix()
    finite = np.isfinite(cost)
    # Stand-in for +inf: exceeds any feasible total, yet small enough that the
    # solver keeps full precision on the finite entries.
    sentinel = 2.0 * float(cost[finite].sum()) + 1.0
    solver_cost = np.where(finite, cost, sentinel)
    rows, cols = linear_sum_assignment(solver_cost)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if np.isfinite(cost[i, j])]
    return _build_matching(problem, pairs)
