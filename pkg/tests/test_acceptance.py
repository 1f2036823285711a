"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import itertools
import json
import math
import time

import numpy as np
import pytest

from crowdmask.cli import main
from crowdmask.core import DensityMap, RasterMask, Rng
from crowdmask.dpmo import run_dpmo
from crowdmask.evaluation import ConfusionMatrix, hungarian_match, matched_total, mean_matched_iou, prf1
from crowdmask.losses import density_mask_loss, density_mask_loss_grad, match_exact, match_three_case
from crowdmask.nnec import NnecParams, all_radii, nn_distances_brute, nn_distances_grid
from crowdmask.rps import CandidateEvaluator, grpo_loss, grpo_loss_grad, sample_groups
from crowdmask.segmenter import CircleSegmenter, FileSegmenter, OracleSegmenter
from crowdmask.synth import SynthConfig, generate_scene, make_density_map, perturb_points

from .helpers import separable_trial, union_is_sum
from .test_evaluation import brute_best
from .test_losses import brute_force, fixture_125, random_problem, square
from .test_losses import MatchingProblem

pytestmark = pytest.mark.acceptance


@pytest.fixture()
def verdict(capsys):
    def report(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:>2}: {'PASS' if ok else 'FAIL'} - {detail}", flush=True)
        assert ok, detail

    return report


def test_01_nnec_exclusivity(verdict):
    start = time.perf_counter()
    circles_checked = violations = grid_mismatch = 0
    for seed in range(200):
        scene = generate_scene(SynthConfig.for_regime("sparse", 30, seed=seed))
        pts = scene.points
        centers = np.floor(pts) + 0.5
        for c in all_radii(pts):
            inside = np.sum((centers[:, 0] - c.center.x) ** 2 + (centers[:, 1] - c.center.y) ** 2 <= c.radius**2)
            circles_checked += 1
            violations += inside != 1
        grid_mismatch += not np.array_equal(nn_distances_grid(pts), nn_distances_brute(pts))
    elapsed = time.perf_counter() - start
    ok = violations == 0 and grid_mismatch == 0 and elapsed < 10.0
    verdict(1, ok, f"{circles_checked} circles, {violations} violations, {grid_mismatch} grid mismatches, {elapsed:.2f}s")


def test_02_dpmo_one_to_one(verdict):
    bad = runs = 0
    for seed in range(50):
        scene = generate_scene(SynthConfig.for_regime("dense", 40, seed=seed))
        prompts = perturb_points(scene.points, 2.0, Rng.for_entity(seed, "perturb"), scene.width, scene.height)
        for backend in (CircleSegmenter(), OracleSegmenter(), FileSegmenter(scene.gt_masks)):
            res = run_dpmo(prompts, scene, backend, NnecParams(), seed)
            runs += 1
            ok = len(res.masks) == len(prompts) and all(not m.is_empty() for m in res.masks) and union_is_sum(res.masks)
            bad += not ok
    verdict(2, bad == 0, f"{runs} runs, {bad} failing")


def test_03_oracle_recovery(verdict):
    scores = []
    for seed in range(50):
        scene = generate_scene(SynthConfig.for_regime("sparse", 20, seed=seed))
        res = run_dpmo(scene.points, scene, OracleSegmenter(noise=0, p_miss=0), NnecParams(), seed)
        scores.append(mean_matched_iou(res.masks, scene.gt_masks))
    mean = float(np.mean(scores))
    verdict(3, mean >= 0.95, f"mean matched IoU {mean:.4f} over 50 sparse scenes (min {min(scores):.4f})")


def test_04_hungarian(verdict):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(500):
        m, n = (int(v) for v in rng.integers(1, 8, 2))
        mat = rng.random((m, n))
        mismatches += matched_total(mat, hungarian_match(mat)) != brute_best(mat)
    verdict(4, mismatches == 0, f"500 matrices, {mismatches} mismatches against exhaustive search")


def test_05_grpo_gradient(verdict):
    rng = np.random.default_rng(5)
    worst = 0.0
    h = 1e-5
    for _ in range(100):
        s = rng.uniform(-5, 5, 5)
        y = int(rng.integers(5))
        g = grpo_loss_grad(s, y)
        for k in range(5):
            e = np.zeros(5)
            e[k] = h
            fd = (grpo_loss(s + e, y) - grpo_loss(s - e, y)) / (2 * h)
            worst = max(worst, abs(fd - g[k]))
    uniform_err = abs(grpo_loss(np.zeros(5), 2) - math.log(5))
    verdict(5, worst < 1e-6 and uniform_err < 1e-12, f"max grad error {worst:.2e}, uniform-loss error {uniform_err:.1e}")


def test_06_rps_improvement(verdict):
    dominated = 0
    n_scenes = 20
    for seed in range(n_scenes):
        scene = generate_scene(SynthConfig.for_regime("dense", 40, seed=100 + seed))
        initial = perturb_points(scene.points, 1.0, Rng.for_entity(seed, "perturb"), scene.width, scene.height)
        groups = sample_groups(initial, 1.0, seed, scene.width, scene.height)
        ev = CandidateEvaluator(initial, scene, OracleSegmenter(), NnecParams(), seed)
        rewards = np.array([ev.rewards(g) for g in groups])
        dominated += rewards.max(axis=1).mean() >= rewards[:, 0].mean()
    wins = 0
    trials = 20
    for seed in range(trials):
        trained, base, _ = separable_trial(seed)
        wins += trained > base
    ok = dominated == n_scenes and wins / trials >= 0.95
    verdict(6, ok, f"reward selection dominates on {dominated}/{n_scenes} dense scenes; trained scorer beats candidate 0 in {wins}/{trials} trials")


def test_07_density_loss(verdict):
    scene = generate_scene(SynthConfig.for_regime("dense", 40, seed=1))
    perfect = density_mask_loss(make_density_map(scene), scene.gt_masks)
    rng = np.random.default_rng(7)
    worst = 0.0
    h = 1e-4
    for _ in range(50):
        vals = rng.uniform(0.01, 0.3, (5, 6)).astype(np.float32)
        owner = rng.integers(-1, 3, (5, 6))
        masks = [RasterMask(owner == k) for k in range(3)]
        grad = density_mask_loss_grad(DensityMap(6, 5, vals), masks)
        for r, c in np.ndindex(vals.shape):
            up, dn = vals.copy(), vals.copy()
            up[r, c] += np.float32(h)
            dn[r, c] -= np.float32(h)
            step = float(up[r, c]) - float(dn[r, c])
            fd = (density_mask_loss(DensityMap(6, 5, up), masks) - density_mask_loss(DensityMap(6, 5, dn), masks)) / step
            worst = max(worst, abs(fd - grad[r, c]))
    fixed = density_mask_loss(*fixture_125())
    ok = perfect < 1e-9 and worst < 1e-5 and fixed == 1.25
    verdict(7, ok, f"perfect map loss {perfect:.1e}, max grad error {worst:.2e}, fixture loss {fixed}")


def test_08_point_matching(verdict):
    rng = np.random.default_rng(8)
    dominance_fail = brute_fail = 0
    for _ in range(500):
        p = random_problem(rng, 9, 9)
        dominance_fail += match_exact(p).total_cost > match_three_case(p).total_cost + 1e-9
    for _ in range(500):
        p = random_problem(rng)
        bad, total = brute_force(p)
        got = match_exact(p)
        brute_fail += len(got.pairs) != min(p.m, p.n) - bad or not math.isclose(got.total_cost, total, rel_tol=1e-12, abs_tol=1e-12)
    cases = [
        (MatchingProblem([(5.5, 5.5)], [(5.0, 5.0)], [square(0, 0, 10, 10)]), [(0, 0)]),
        (MatchingProblem([(13.0, 10.0), (5.0, 10.0)], [(10.0, 10.0)], [square(0, 0, 20, 20)]), [(0, 0)]),
        (MatchingProblem([(2.0, 30.0), (2.0, 32.0)], [(2.0, 23.0)], [square(0, 0, 5, 5)]), [(0, 0)]),
    ]
    fig_fail = sum(match_three_case(p).pairs != want for p, want in cases)
    ok = dominance_fail == brute_fail == fig_fail == 0
    verdict(8, ok, f"dominance failures {dominance_fail}/500, brute-force mismatches {brute_fail}/500, case fixtures failing {fig_fail}/3")


def test_09_prf1(verdict):
    p, r, f = prf1(ConfusionMatrix(3, 1, 2))
    zeros = prf1(ConfusionMatrix(0, 0, 0)) == (0.0, 0.0, 0.0) and prf1(ConfusionMatrix(0, 3, 4)) == (0.0, 0.0, 0.0)
    ok = p == 0.75 and r == 0.6 and abs(f - 0.6667) <= 1e-4 and zeros
    verdict(9, ok, f"P={p}, R={r}, F1={f:.4f}, degenerate zeros {'ok' if zeros else 'wrong'}")


def test_10_determinism(verdict, tmp_path, capsys):
    base = ["pipeline", "--seed", "7", "--n-images", "4", "--n-heads", "40"]
    dirs = []
    for k, jobs in enumerate(("1", "1", "4")):
        d = tmp_path / f"run{k}"
        assert main(base + ["--jobs", jobs, "--report", str(d / "report.json"), "--render-dir", str(d / "png")]) == 0
        dirs.append(d)
    capsys.readouterr()
    names = sorted(p.name for p in (dirs[0] / "png").iterdir())
    same = all(
        (d / "report.json").read_bytes() == (dirs[0] / "report.json").read_bytes()
        and all((d / "png" / n).read_bytes() == (dirs[0] / "png" / n).read_bytes() for n in names)
        for d in dirs[1:]
    )
    verdict(10, same and len(names) == 4, f"reports and {len(names)} overlays byte-identical across two runs and --jobs 4: {same}")


def _ablation(backend_factory, scenes):
    out = {}
    for bounded in (False, True):
        params = NnecParams(bounded_mode=bounded)
        out[bounded] = float(np.mean([
            mean_matched_iou(run_dpmo(s.points, s, backend_factory(), params, k).masks, s.gt_masks)
            for k, s in enumerate(scenes)
        ]))
    return out


def test_11_bounded_vs_unbounded(verdict):
    scenes = [generate_scene(SynthConfig.for_regime("dense", 60, seed=300 + k)) for k in range(20)]
    clean = _ablation(lambda: OracleSegmenter(noise=0, p_miss=0), scenes)
    noisy = _ablation(lambda: OracleSegmenter(), scenes)
    ok = clean[False] >= clean[True]
    verdict(
        11,
        ok,
        f"clean proposals: unbounded {clean[False]:.4f} vs bounded {clean[True]:.4f}; "
        f"noisy oracle (not gated): unbounded {noisy[False]:.4f} vs bounded {noisy[True]:.4f}",
    )
