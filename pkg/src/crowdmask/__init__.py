"""Crowd instance masks from point annotations.

Exclusion-circle constrained point-to-mask conversion, reinforced candidate
point selection, mask-supervised counting losses and Hungarian-IoU
evaluation, with synthetic scenes for desk-scale verification.
"""

from .core import DensityMap, ExclusionCircle, Point2D, RasterMask, RleRecord, Rng, Scene, rle_decode, rle_encode
from .dpmo import DpmoResult, run_dpmo
from .evaluation import ConfusionMatrix, confusion, hungarian_match, iou, iou_matrix, mean_matched_iou, prf1
from .losses import MatchingProblem, density_mask_loss, density_mask_loss_grad, match_exact, match_three_case
from .nnec import NnecParams, all_radii, constrain, nnec_radius, rasterize_circle, resolve_overlaps
from .rps import CandidateGroup, ScorerModel, grpo_loss, grpo_loss_grad, sample_group, select_point, train_scorer
from .segmenter import CircleSegmenter, FileSegmenter, OracleSegmenter
from .synth import SynthConfig, generate_scene, make_density_map, perturb_points

__version__ = "0.1.0"
