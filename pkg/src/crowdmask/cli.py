"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 data error (bad or missing input).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import io
from .core import Scene
from .dpmo import run_dpmo
from .errors import CrowdMaskError
from .evaluation import evaluate_dataset
from .losses import MatchingProblem, density_mask_loss, match_exact, match_three_case
from .nnec import NnecParams
from .pipeline import PipelineConfig, run_pipeline
from .render import render_overlay
from .rps import (
    CandidateEvaluator,
    ScorerModel,
    annotate_groups,
    sample_groups,
    select_by_reward,
    select_point,
    train_scorer,
)
from .segmenter import make_segmenter
from .synth import REGIMES, SynthConfig, generate_scene, make_density_map

log = logging.getLogger("crowdmask")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; usage errors are 1 here
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- shared flag groups -------------------------------------------------------


def _add_nnec(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("exclusion circles")
    g.add_argument("--r-min", type=float, default=5.0, help="minimum circle radius in px (default 5)")
    g.add_argument("--r-max", type=float, default=200.0, help="maximum circle radius in px (default 200)")
    g.add_argument("--delta", type=float, default=1.0, help="gap below the nearest-neighbour distance (default 1)")
    g.add_argument("--bounded", action="store_true", help="non-overlapping circles (half the neighbour distance)")


def _add_segmenter(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("segmenter")
    g.add_argument("--segmenter", choices=("circle", "oracle", "file"), default="oracle")
    g.add_argument("--proposals", help="RLE masks file for --segmenter file")
    g.add_argument("--noise", type=int, default=2, help="oracle boundary noise in px (default 2)")
    g.add_argument("--p-miss", type=float, default=0.05, help="oracle miss probability (default 0.05)")


def _nnec(args) -> NnecParams:
    return NnecParams(args.r_min, args.r_max, args.delta, args.bounded)


def _backend(args, scene: Scene):
    proposals = None
    if args.segmenter == "file":
        if not args.proposals:
            raise UsageError("--segmenter file requires --proposals")
        proposals = io.read_masks(args.proposals, (scene.height, scene.width))
    if args.segmenter == "oracle" and scene.gt_masks is None:
        raise UsageError("--segmenter oracle requires --scene with ground-truth masks")
    return make_segmenter(args.segmenter, noise=args.noise, p_miss=args.p_miss, r_max=args.r_max, proposals=proposals)


def _require(args, *names: str) -> None:
    missing = [n for n in names if getattr(args, n) in (None, [], "")]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=2))


def _load_prompt_scene(args) -> tuple[np.ndarray, Scene]:
    points, width, height = io.read_points(args.points)
    if args.scene:
        scene = io.read_scene(args.scene)
        if (scene.width, scene.height) != (width, height):
            raise ValueError("points file and scene disagree on image size")
    else:
        scene = Scene(width, height, points, None, Path(args.points).stem)
    return points, scene


# -- subcommands --------------------------------------------------------------


def cmd_synth(args) -> int:
    _require(args, "out")
    overrides = {}
    if args.spacing is not None:
        overrides["min_center_spacing"] = args.spacing
    if args.head_radius is not None:
        overrides["head_radius_range"] = tuple(args.head_radius)
    cfg = SynthConfig.for_regime(
        args.regime, args.n_heads, seed=args.seed, width=args.width, height=args.height,
        nnec=NnecParams(args.r_min, args.r_max, args.delta), **overrides,
    )
    scene = generate_scene(cfg, image_id=Path(args.out).name)
    density = None if args.density == "none" else make_density_map(scene, args.density)
    io.write_scene(args.out, scene, density)
    _emit({"out": str(args.out), "n_heads": len(scene), "width": scene.width, "height": scene.height})
    return EXIT_OK


def cmd_dpmo(args) -> int:
    _require(args, "points", "out")
    prompts, scene = _load_prompt_scene(args)
    backend = _backend(args, scene)
    result = run_dpmo(prompts, scene, backend, _nnec(args), args.seed, jobs=args.jobs)
    io.write_masks(args.out, result.masks)
    if args.render:
        render_overlay(scene.width, scene.height, result.masks, prompts, args.render)
    _emit({
        "n_masks": len(result.masks),
        "n_fallback": int(sum(result.fallback_flags)),
        "fallback_flags": [bool(f) for f in result.fallback_flags],
        "radii": [c.radius for c in result.circles],
    })
    return EXIT_OK


def cmd_select(args) -> int:
    _require(args, "points", "out")
    initial, scene = _load_prompt_scene(args)
    needs_gt = args.scorer == "reward-oracle" or args.save_scorer
    if needs_gt and scene.gt_masks is None:
        raise UsageError("reward-based selection and scorer training need --scene with ground truth")
    if len(initial) != len(scene.points):
        raise ValueError("initial predictions must align one-to-one with the scene annotations")
    backend = _backend(args, scene)
    params = _nnec(args)
    groups = sample_groups(initial, args.sigma, args.seed, scene.width, scene.height, args.group_size)
    evaluator = CandidateEvaluator(initial, scene, backend, params, args.seed)
    annotate_groups(groups, evaluator, with_rewards=bool(needs_gt))
    summary = {"n_groups": len(groups)}
    if args.save_scorer:
        model = train_scorer(groups, lr=args.lr, epochs=args.epochs, seed=args.seed)
        model.save(args.save_scorer)
        summary["train_loss"] = [model.history[0], model.history[-1]]
    if args.scorer == "reward-oracle":
        selected = np.array([select_by_reward(g) for g in groups])
    elif args.scorer.startswith("trained:"):
        model = ScorerModel.load(args.scorer.split(":", 1)[1])
        selected = np.array([select_point(g, model) for g in groups])
    else:
        raise UsageError("--scorer must be reward-oracle or trained:<path>")
    io.write_points(args.out, selected, scene.width, scene.height)
    if needs_gt:
        summary["mean_reward_initial"] = float(np.mean([g.rewards[0] for g in groups]))
        summary["mean_reward_best"] = float(np.mean([g.rewards.max() for g in groups]))
    _emit(summary)
    return EXIT_OK


def cmd_eval(args) -> int:
    _require(args, "pred", "gt")
    if len(args.pred) != len(args.gt):
        raise UsageError("--pred and --gt need the same number of files")
    triples = []
    for pred_path, gt_path in zip(args.pred, args.gt):
        gts = io.read_masks(gt_path)
        size = gts[0].shape if gts else None
        triples.append((Path(pred_path).stem, io.read_masks(pred_path, size), gts))
    report = evaluate_dataset(triples, args.iou_threshold).to_dict()
    if args.report:
        io.dump_json(report, args.report)
    _emit(report)
    return EXIT_OK


def cmd_loss(args) -> int:
    if args.kind == "density":
        _require(args, "map", "masks")
        dmap = io.read_density(args.map)
        masks = io.read_masks(args.masks, (dmap.height, dmap.width))
        _emit({"loss": density_mask_loss(dmap, masks)})
        return EXIT_OK
    _require(args, "pred", "gt", "masks")
    pred, _, _ = io.read_points(args.pred)
    gt, width, height = io.read_points(args.gt)
    masks = io.read_masks(args.masks, (height, width))
    problem = MatchingProblem(pred, gt, masks)
    matcher = match_exact if args.method == "exact" else match_three_case
    _emit(matcher(problem).to_dict())
    return EXIT_OK


def cmd_render(args) -> int:
    _require(args, "points", "masks", "out")
    points, width, height = io.read_points(args.points)
    masks = io.read_masks(args.masks, (height, width))
    render_overlay(width, height, masks, points, args.out)
    _emit({"out": str(args.out), "n_masks": len(masks)})
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = PipelineConfig(
        seed=args.seed,
        n_images=args.n_images,
        regime=args.regime,
        n_heads=args.n_heads,
        width=args.width,
        height=args.height,
        scene_dirs=tuple(args.scene or ()),
        init_sigma=args.init_sigma,
        sigma=args.sigma,
        group_size=args.group_size,
        scorer=args.scorer,
        segmenter=args.segmenter,
        noise=args.noise,
        p_miss=args.p_miss,
        nnec=_nnec(args),
        iou_threshold=args.iou_threshold,
        jobs=args.jobs,
    )
    report, runs = run_pipeline(cfg)
    payload = report.to_dict()
    if args.report:
        io.dump_json(payload, args.report)
    if args.render_dir:
        out = Path(args.render_dir)
        for run in runs:
            render_overlay(run.scene.width, run.scene.height, run.masks, run.selected,
                           out / f"{run.scene.image_id}.png")
    _emit(payload)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _Parser(prog="crowdmask", description="Point-prompted crowd instance masks.")
    parser.add_argument("--config", help="JSON file of option defaults; command-line flags override it")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    p = sub.add_parser("synth", help="generate a synthetic crowd scene directory")
    p.add_argument("--n-heads", type=int, default=60)
    p.add_argument("--regime", choices=REGIMES, default="dense")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--spacing", type=float, help="minimum head centre spacing in px")
    p.add_argument("--head-radius", type=float, nargs=2, metavar=("MIN", "MAX"))
    p.add_argument("--density", choices=("none", "perfect", "uniform_mass"), default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--r-min", type=float, default=5.0)
    p.add_argument("--r-max", type=float, default=200.0)
    p.add_argument("--delta", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)
    subs["synth"] = p

    p = sub.add_parser("dpmo", help="turn point prompts into disjoint instance masks")
    p.add_argument("--points", help="prompt points file")
    p.add_argument("--scene", help="scene directory with ground truth (needed by the oracle segmenter)")
    p.add_argument("--out", help="output masks file")
    p.add_argument("--render", help="optional PNG overlay path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    _add_segmenter(p)
    _add_nnec(p)
    p.set_defaults(func=cmd_dpmo)
    subs["dpmo"] = p

    p = sub.add_parser("select", help="sample candidate groups and pick one prompt per group")
    p.add_argument("--points", help="initial predicted points file")
    p.add_argument("--scene", help="scene directory with ground truth")
    p.add_argument("--out", help="selected points file")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--group-size", type=int, default=5)
    p.add_argument("--scorer", default="reward-oracle", help="reward-oracle or trained:<weights.json>")
    p.add_argument("--save-scorer", help="train a scorer on this image and write its weights here")
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    _add_segmenter(p)
    _add_nnec(p)
    p.set_defaults(func=cmd_select)
    subs["select"] = p

    p = sub.add_parser("eval", help="IoU / precision / recall / F1 of predicted masks")
    p.add_argument("--pred", nargs="+", help="predicted masks file(s)")
    p.add_argument("--gt", nargs="+", help="ground-truth masks file(s), same order as --pred")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_eval)
    subs["eval"] = p

    p = sub.add_parser("loss", help="mask-supervised counting losses")
    p.add_argument("kind", choices=("density", "match"))
    p.add_argument("--map", help="density map (header .json or raw .bin)")
    p.add_argument("--masks", help="masks file")
    p.add_argument("--pred", help="predicted points file")
    p.add_argument("--gt", help="ground-truth points file")
    p.add_argument("--method", choices=("three-case", "exact"), default="exact")
    p.set_defaults(func=cmd_loss)
    subs["loss"] = p

    p = sub.add_parser("render", help="draw masks and points to a PNG")
    p.add_argument("--points")
    p.add_argument("--masks")
    p.add_argument("--out")
    p.set_defaults(func=cmd_render)
    subs["render"] = p

    p = sub.add_parser("pipeline", help="synthesize/load, perturb, select, segment and evaluate")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-images", type=int, default=1)
    p.add_argument("--regime", choices=REGIMES, default="dense")
    p.add_argument("--n-heads", type=int, default=60)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--scene", nargs="+", help="scene directories to load instead of synthesizing")
    p.add_argument("--init-sigma", type=float, default=2.0, help="noise on annotations to mimic initial predictions")
    p.add_argument("--sigma", type=float, default=1.0, help="candidate sampling sigma")
    p.add_argument("--group-size", type=int, default=5)
    p.add_argument("--scorer", default="reward-oracle", help="reward-oracle, initial, or trained:<weights.json>")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--render-dir", help="write one PNG overlay per image here")
    p.add_argument("--jobs", type=int, default=1)
    _add_segmenter(p)
    _add_nnec(p)
    p.set_defaults(func=cmd_pipeline)
    subs["pipeline"] = p
    return parser, subs


def _apply_config(argv: Sequence[str], subs: dict[str, argparse.ArgumentParser]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    command = next((a for a in rest if a in subs), None)
    if command is None:
        return
    try:
        data = io.load_json(known.config)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    parser = subs[command]
    dests = {a.dest for a in parser._actions}
    values = {}
    for key, value in data.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in dests:
            raise UsageError(f"unknown config key {key!r} for {command}")
        values[dest] = value
    parser.set_defaults(**values)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subs = build_parser()
    try:
        _apply_config(argv, subs)
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"crowdmask: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"crowdmask: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CrowdMaskError, ValueError, KeyError, OSError) as exc:
        print(f"crowdmask: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
