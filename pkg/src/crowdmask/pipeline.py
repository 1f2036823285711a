"""End-to-end run: scene -> noisy initial predictions -> candidate selection -> DPMO -> evaluation."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import RasterMask, Rng, Scene, derive_seed
from .dpmo import run_dpmo
from .evaluation import EvaluationReport, ImageEvaluation, evaluate_image
from .io import read_masks, read_scene
from .nnec import NnecParams
from .rps import (
    CandidateEvaluator,
    ScorerModel,
    annotate_groups,
    sample_groups,
    select_by_reward,
    select_point,
)
from .segmenter import Segmenter, make_segmenter
from .synth import SynthConfig, generate_scene, perturb_points

log = logging.getLogger(__name__)

PROPOSALS_FILE = "proposals.json"


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 7
    n_images: int = 1
    regime: str = "dense"
    n_heads: int = 60
    width: Optional[int] = None
    height: Optional[int] = None
    scene_dirs: tuple[str, ...] = ()
    init_sigma: float = 2.0
    sigma: float = 1.0
    group_size: int = 5
    scorer: str = "reward-oracle"
    segmenter: str = "oracle"
    noise: int = 2
    p_miss: float = 0.05
    nnec: NnecParams = field(default_factory=NnecParams)
    iou_threshold: float = 0.5
    jobs: int = 1

    def __post_init__(self) -> None:
        if not (self.scorer in ("reward-oracle", "initial") or self.scorer.startswith("trained:")):
            raise ValueError("scorer must be 'reward-oracle', 'initial' or 'trained:<path>'")
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")


@dataclass
class ImageRun:
    scene: Scene
    initial: np.ndarray
    selected: np.ndarray
    masks: list[RasterMask]
    evaluation: ImageEvaluation


def _scene_for(cfg: PipelineConfig, k: int, image_seed: int) -> tuple[Scene, Optional[list[RasterMask]]]:
    if cfg.scene_dirs:
        directory = Path(cfg.scene_dirs[k])
        scene = read_scene(directory)
        proposals = None
        if cfg.segmenter == "file":
            proposals = read_masks(directory / PROPOSALS_FILE, (scene.height, scene.width))
        return scene, proposals
    synth = SynthConfig.for_regime(
        cfg.regime, cfg.n_heads, seed=image_seed, width=cfg.width, height=cfg.height, nnec=cfg.nnec
    )
    return generate_scene(synth, image_id=f"image-{k:03d}"), None


def _backend(cfg: PipelineConfig, proposals) -> Segmenter:
    if cfg.segmenter == "file" and proposals is None:
        raise ValueError(f"file segmenter needs {PROPOSALS_FILE} in every scene directory")
    return make_segmenter(cfg.segmenter, noise=cfg.noise, p_miss=cfg.p_miss, r_max=cfg.nnec.r_max, proposals=proposals)


def run_image(cfg: PipelineConfig, k: int) -> ImageRun:
    image_seed = derive_seed(cfg.seed, f"image/{k}")
    scene, proposals = _scene_for(cfg, k, image_seed)
    if scene.gt_masks is None:
        raise ValueError(f"{scene.image_id}: evaluation needs ground-truth masks")
    backend = _backend(cfg, proposals)
    initial = perturb_points(
        scene.points, cfg.init_sigma, Rng.for_entity(image_seed, "perturb"), scene.width, scene.height
    )
    if cfg.scorer == "initial" or len(initial) == 0:
        selected = initial
    else:
        groups = sample_groups(initial, cfg.sigma, image_seed, scene.width, scene.height, cfg.group_size)
        evaluator = CandidateEvaluator(initial, scene, backend, cfg.nnec, image_seed)
        if cfg.scorer == "reward-oracle":
            for g in groups:
                g.rewards = evaluator.rewards(g)
            selected = np.array([select_by_reward(g) for g in groups])
        else:
            model = ScorerModel.load(cfg.scorer.split(":", 1)[1])
            annotate_groups(groups, evaluator, with_rewards=False)
            selected = np.array([select_point(g, model) for g in groups])
    if len(selected):
        masks = run_dpmo(selected, scene, backend, cfg.nnec, image_seed).masks
    else:
        masks = []
    ev = evaluate_image(masks, scene.gt_masks, cfg.iou_threshold, scene.image_id)
    log.info("%s: %d prompts, iou=%.4f", scene.image_id, len(selected), ev.iou)
    return ImageRun(scene, initial, np.asarray(selected).reshape(-1, 2), masks, ev)


def _run_one(args) -> ImageRun:
    cfg, k = args
    return run_image(cfg, k)


def run_pipeline(cfg: PipelineConfig) -> tuple[EvaluationReport, list[ImageRun]]:
    """Evaluate every image; output is independent of ``cfg.jobs``."""
    n = len(cfg.scene_dirs) if cfg.scene_dirs else cfg.n_images
    tasks = [(cfg, k) for k in range(n)]
    if cfg.jobs > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            runs = list(pool.map(_run_one, tasks))
    else:
        runs = [_run_one(t) for t in tasks]
    report = EvaluationReport([r.evaluation for r in runs], cfg.iou_threshold)
    return report, runs

