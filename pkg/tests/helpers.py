"""Fixtures shared between the unit tests and the acceptance gate."""

import numpy as np

from crowdmask.core import Rng
from crowdmask.dpmo import run_dpmo
from crowdmask.evaluation import mean_matched_iou
from crowdmask.nnec import NnecParams
from crowdmask.rps import CandidateEvaluator, annotate_groups, sample_groups, select_point, train_scorer
from crowdmask.segmenter import FileSegmenter
from crowdmask.synth import SynthConfig, generate_scene, perturb_points

PARAMS = NnecParams()


def separable_image(seed, n_heads=12, sigma=6.0):
    """Sparse scene whose proposals are the GT masks but bind only on contact.

    The file backend gets a 1 px lookup radius, so a prompt that misses its
    head gets no proposal and DPMO falls back to the (much larger) circle.
    Reward is then high exactly when the fallback flag is 0.
    """
    scene = generate_scene(SynthConfig.for_regime("sparse", n_heads, seed=seed))
    backend = FileSegmenter(scene.gt_masks, r_max=1.0)
    initial = perturb_points(scene.points, sigma, Rng.for_entity(seed, "perturb"), scene.width, scene.height)
    groups = sample_groups(initial, sigma, seed, scene.width, scene.height)
    annotate_groups(groups, CandidateEvaluator(initial, scene, backend, PARAMS, seed))
    return scene, backend, initial, groups


def separable_trial(seed, n_train=3, lr=0.01, epochs=200):
    """Train on ``n_train`` images, then compare IoU on a held-out one.

    Returns ``(trained_iou, candidate0_iou, model)``.
    """
    train = []
    for k in range(n_train):
        train += separable_image(1000 * seed + k)[3]
    model = train_scorer(train, lr=lr, epochs=epochs, seed=seed)
    scene, backend, initial, groups = separable_image(1000 * seed + 99)
    chosen = np.array([select_point(g, model) for g in groups])
    trained = mean_matched_iou(run_dpmo(chosen, scene, backend, PARAMS, seed).masks, scene.gt_masks)
    base = mean_matched_iou(run_dpmo(initial, scene, backend, PARAMS, seed).masks, scene.gt_masks)
    return trained, base, model


def union_is_sum(masks):
    union = np.logical_or.reduce([m.bits for m in masks])
    return int(union.sum()) == sum(m.population for m in masks)
