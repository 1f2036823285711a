"""Reinforced point selection.

Each initial prediction spawns a group of candidate prompts (the prediction
itself plus Gaussian jitter). Candidates are scored by running DPMO with the
candidate in place of the prediction; the reward is the IoU against the
matching ground-truth mask. A linear scorer over per-candidate features is
trained with the group-wise cross-entropy objective so that, at inference,
the highest-logit candidate is the one most likely to segment well.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Point2D, Rng, Scene, as_points, clamp_to_bounds
from .dpmo import DpmoContext
from .errors import EmptyTrainingSet, MissingGroundTruth
from .evaluation import iou
from .nnec import NnecParams, rasterize_circle
from .segmenter import Segmenter

GROUP_SIZE = 5
N_FEATURES = 5
FEATURE_NAMES = ("offset_x", "offset_y", "nn_initial_dist", "mask_fill", "fallback")


@dataclass
class CandidateGroup:
    index: int
    candidates: np.ndarray
    rewards: Optional[np.ndarray] = None
    logits: Optional[np.ndarray] = None
    features: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.candidates = as_points(self.candidates)
        if len(self.candidates) < 2:
            raise ValueError("a candidate group needs at least two candidates")

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def best(self) -> int:
        """Index of the highest reward (first on ties)."""
        if self.rewards is None:
            raise MissingGroundTruth(f"group {self.index} has no rewards")
        return int(np.argmax(self.rewards))


# -- sampling -----------------------------------------------------------------


def sample_group(
    initial, sigma: float, rng: Rng, width: int, height: int, size: int = GROUP_SIZE
) -> np.ndarray:
    """``size`` candidates: ``initial`` first, then Gaussian jitter (x then y per candidate)."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    x0, y0 = float(initial[0]), float(initial[1])
    out = np.empty((size, 2))
    out[0] = (x0, y0)
    for c in range(1, size):
        out[c, 0] = rng.gaussian(x0, sigma)
        out[c, 1] = rng.gaussian(y0, sigma)
    out[1:] = clamp_to_bounds(out[1:], width, height)
    return out


def sample_groups(
    initial, sigma: float, seed: int, width: int, height: int, size: int = GROUP_SIZE
) -> list[CandidateGroup]:
    pts = as_points(initial)
    return [
        CandidateGroup(i, sample_group(p, sigma, Rng.for_entity(seed, f"sample/{i}"), width, height, size))
        for i, p in enumerate(pts)
    ]


# -- rewards and features -----------------------------------------------------


class CandidateEvaluator:
    """Runs DPMO once per candidate, swapping a single prompt at a time."""

    def __init__(self, initial, scene: Scene, backend: Segmenter, params: NnecParams = NnecParams(), seed: int = 0):
        self.initial = as_points(initial)
        self.scene = scene
        self.params = params
        self.ctx = DpmoContext(self.initial, scene, backend, params, seed)

    def outcome(self, index: int, candidate):
        res = self.ctx.substitute(index, candidate)
        return res.masks[index], res.circles[index], res.fallback_flags[index]

    def rewards(self, group: CandidateGroup, gt_index: Optional[int] = None) -> np.ndarray:
        gts = self.scene.gt_masks
        if gts is None:
            raise MissingGroundTruth("rewards need ground-truth masks")
        j = group.index if gt_index is None else gt_index
        if not 0 <= j < len(gts):
            raise IndexError(f"ground-truth index {j} out of range")
        return np.array([iou(self.outcome(j, c)[0], gts[j]) for c in group.candidates])

    def features(self, group: CandidateGroup) -> np.ndarray:
        i = group.index
        cands = group.candidates
        centroid = cands.mean(axis=0)
        others = np.delete(self.initial, i, axis=0)
        feats = np.zeros((len(cands), N_FEATURES))
        for c, cand in enumerate(cands):
            mask, circle, fallback = self.outcome(i, cand)
            disc = rasterize_circle(circle, self.scene.width, self.scene.height)
            # Lengths are expressed in units of the candidate's circle radius.
            r = circle.radius
            feats[c, 0] = (cand[0] - centroid[0]) / r
            feats[c, 1] = (cand[1] - centroid[1]) / r
            if len(others):
                feats[c, 2] = float(np.min(np.hypot(others[:, 0] - cand[0], others[:, 1] - cand[1]))) / r
            feats[c, 3] = mask.population / disc.population if disc.population else 0.0
            feats[c, 4] = 1.0 if fallback else 0.0
        return feats


def compute_rewards(
    group: CandidateGroup,
    scene: Scene,
    backend: Segmenter,
    params: NnecParams,
    gt_index: int,
    initial=None,
    seed: int = 0,
    evaluator: Optional[CandidateEvaluator] = None,
) -> np.ndarray:
    """IoU of each candidate's DPMO mask with ``gt_masks[gt_index]``.

    All other prompts stay at ``initial`` (defaults to the scene annotations).
    Stores the rewards on ``group`` and returns them.
    """
    if scene.gt_masks is None:
        raise MissingGroundTruth("scene has no ground-truth masks")
    if evaluator is None:
        base = scene.points if initial is None else initial
        evaluator = CandidateEvaluator(base, scene, backend, params, seed)
    # The candidate always replaces the prompt at the ground-truth slot.
    slot = group if group.index == gt_index else CandidateGroup(gt_index, group.candidates)
    group.rewards = evaluator.rewards(slot, gt_index)
    return group.rewards


def annotate_groups(
    groups: Sequence[CandidateGroup],
    evaluator: CandidateEvaluator,
    with_rewards: bool = True,
) -> None:
    """Fill ``features`` (and ``rewards`` when ground truth exists) in place."""
    for g in groups:
        g.features = evaluator.features(g)
        if with_rewards:
            g.rewards = evaluator.rewards(g)


# -- group cross-entropy ------------------------------------------------------


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def grpo_loss(logits, y: int) -> float:
    """``-s_y + log(sum_c exp(s_c))`` with max-subtraction."""
    s = np.asarray(logits, dtype=np.float64)
    if not 0 <= y < s.size:
        raise IndexError("target index out of range")
    m = float(np.max(s))
    return float(-(s[y] - m) + np.log(np.sum(np.exp(s - m))))


def grpo_loss_grad(logits, y: int) -> np.ndarray:
    """``softmax(logits) - onehot(y)``."""
    s = np.asarray(logits, dtype=np.float64)
    p = np.exp(_log_softmax(s))
    p[y] -= 1.0
    return p


def grpo_loss_batch(logits, ys) -> float:
    """Mean of :func:`grpo_loss` over groups; ``logits`` is (N, k)."""
    s = np.asarray(logits, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.int64)
    if s.ndim != 2 or len(s) == 0:
        raise ValueError("expected a non-empty (N, k) logit array")
    lsm = _log_softmax(s)
    return float(-np.mean(lsm[np.arange(len(s)), ys]))


# -- scorer -------------------------------------------------------------------


@dataclass
class ScorerModel:
    weights: np.ndarray
    bias: float = 0.0
    history: list[float] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(N_FEATURES)
        if not (np.all(np.isfinite(self.weights)) and np.isfinite(self.bias)):
            raise ValueError("scorer weights must be finite")

    @classmethod
    def zeros(cls) -> "ScorerModel":
        return cls(np.zeros(N_FEATURES), 0.0)

    def logits(self, features: np.ndarray) -> np.ndarray:
        return np.asarray(features, dtype=np.float64) @ self.weights + self.bias

    def to_dict(self) -> dict:
        return {"features": list(FEATURE_NAMES), "weights": [float(w) for w in self.weights], "bias": float(self.bias)}

    @classmethod
    def from_dict(cls, data: dict) -> "ScorerModel":
        return cls(np.asarray(data["weights"], dtype=np.float64), float(data.get("bias", 0.0)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ScorerModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _training_arrays(groups: Sequence[CandidateGroup]) -> tuple[np.ndarray, np.ndarray]:
    if not groups:
        raise EmptyTrainingSet("no groups to train on")
    sizes = {len(g) for g in groups}
    if len(sizes) != 1:
        raise ValueError("all groups must have the same number of candidates")
    for g in groups:
        if g.features is None or g.rewards is None:
            raise EmptyTrainingSet(f"group {g.index} lacks features or rewards")
    feats = np.stack([g.features for g in groups])
    ys = np.array([g.best for g in groups])
    return feats, ys


def scorer_loss(model: ScorerModel, groups: Sequence[CandidateGroup]) -> float:
    feats, ys = _training_arrays(groups)
    return grpo_loss_batch(model.logits(feats), ys)


def train_scorer(
    groups: Sequence[CandidateGroup],
    lr: float = 0.01,
    epochs: int = 200,
    seed: int = 0,
    init_scale: float = 0.01,
) -> ScorerModel:
    """Full-batch gradient descent on the mean group cross-entropy.

    Weights start from a seeded N(0, init_scale) draw; ``model.history`` holds
    the loss before each update plus the final loss.
    """
    feats, ys = _training_arrays(groups)
    rng = Rng.for_entity(seed, "scorer-init")
    w = np.array([rng.gaussian(0.0, init_scale) for _ in range(N_FEATURES)])
    b = 0.0
    n, k, _ = feats.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), ys] = 1.0
    history = []
    for _ in range(epochs):
        logits = feats @ w + b
        history.append(grpo_loss_batch(logits, ys))
        # d(loss)/d(logits) per group, averaged over groups.
        dlogits = (np.exp(_log_softmax(logits)) - onehot) / n
        w = w - lr * np.einsum("nk,nkf->f", dlogits, feats)
        b = b - lr * float(dlogits.sum())
    history.append(grpo_loss_batch(feats @ w + b, ys))
    return ScorerModel(w, b, history)


# -- selection ----------------------------------------------------------------


def select_index(group: CandidateGroup, model: ScorerModel) -> int:
    if group.features is None:
        raise ValueError(f"group {group.index} has no features")
    scores = model.logits(group.features)
    group.logits = scores
    return int(np.argmax(scores))


def select_point(group: CandidateGroup, model: ScorerModel) -> Point2D:
    """Highest-scoring candidate, lowest index on ties."""
    c = select_index(group, model)
    return Point2D(float(group.candidates[c, 0]), float(group.candidates[c, 1]))


def select_by_reward(group: CandidateGroup) -> Point2D:
    c = group.best
    return Point2D(float(group.candidates[c, 0]), float(group.candidates[c, 1]))
