"""Synthetic crowd scenes and gradient-descent box regression.

Scenes are small sets of overlapping ground-truth boxes placed by seeded
rejection sampling so that each box overlaps its predecessor within a
target IoU band. Proposals are jittered copies of the ground truths.
Plain fixed-step gradient descent then moves the predicted boxes under the
combined loss; the quantity under study is the loss geometry, so there is
no momentum or line search.

No classifier exists here, so the detection score of a final box is a
surrogate: its IoU with its designated target. Only relative comparisons
between runs from identical initialization are meaningful.

Randomness runs through one seeded generator per stage (scene placement,
proposal jitter) so that adding draws to one stage cannot shift the other.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .assignment import AssignmentSet, assign
from .evaluation import Annotation, match_detections
from .geometry import Box, area, intersection_area, iog, iou
from .losses import LossBreakdown, LossConfig, total_loss, total_loss_gradient
from .nms import Detection, greedy_nms

__all__ = [
    "SceneConfig",
    "OptimizerConfig",
    "Trajectory",
    "TrajectoryStep",
    "SceneRun",
    "RunMetrics",
    "PairedResult",
    "SigmaGridCell",
    "SceneGenerationError",
    "SimulationError",
    "generate_scene",
    "generate_proposals",
    "optimize",
    "nms_sensitivity_sweep",
    "run_scene",
    "run_metrics",
    "paired_comparison",
    "sigma_grid",
    "DEFAULT_NMS_SWEEP_THRESHOLDS",
]

_SCENE_STREAM = 0
_PROPOSAL_STREAM = 1
_PLACEMENT_ATTEMPTS = 1000
_JITTER_ATTEMPTS = 1000

DEFAULT_NMS_SWEEP_THRESHOLDS = tuple((30 + 5 * k) / 100 for k in range(9))


class SceneGenerationError(RuntimeError):
    """Rejection sampling ran out of attempts."""


class SimulationError(RuntimeError):
    """Optimization hit a non-finite loss or gradient, or had no positives."""


@dataclass(frozen=True)
class SceneConfig:
    num_gts: int = 2
    overlap_range: tuple[float, float] = (0.3, 0.6)
    gt_size_range: tuple[float, float] = (0.8, 1.2)
    scene_extent: tuple[float, float] = (8.0, 8.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_gts < 1:
            raise ValueError(f"num_gts must be >= 1, got {self.num_gts}")
        lo, hi = self.overlap_range
        if not 0.0 <= lo <= hi < 1.0:
            raise ValueError(f"overlap_range must satisfy 0 <= lo <= hi < 1, got {self.overlap_range}")
        slo, shi = self.gt_size_range
        if not 0.0 < slo <= shi:
            raise ValueError(f"gt_size_range must be positive and ordered, got {self.gt_size_range}")
        w, h = self.scene_extent
        if w <= 0 or h <= 0:
            raise ValueError(f"scene_extent must be positive, got {self.scene_extent}")
        if shi > min(w, h):
            raise ValueError("gt_size_range exceeds the scene extent")

    def to_dict(self) -> dict:
        return {
            "num_gts": self.num_gts,
            "overlap_range": list(self.overlap_range),
            "gt_size_range": list(self.gt_size_range),
            "scene_extent": list(self.scene_extent),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SceneConfig":
        if not isinstance(data, dict):
            raise ValueError("scene config must be a JSON object")
        known = {"num_gts", "overlap_range", "gt_size_range", "scene_extent", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scene config fields: {sorted(unknown)}")
        kwargs = dict(data)
        for key in ("overlap_range", "gt_size_range", "scene_extent"):
            if key in kwargs:
                kwargs[key] = tuple(float(v) for v in kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.5
    steps: int = 150
    proposals_per_gt: int = 3
    init_noise: float = 0.15
    seed: int = 0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.steps <= 0:
            raise ValueError(f"steps must be positive, got {self.steps}")
        if self.proposals_per_gt <= 0:
            raise ValueError(f"proposals_per_gt must be positive, got {self.proposals_per_gt}")
        if not (math.isfinite(self.init_noise) and self.init_noise >= 0):
            raise ValueError(f"init_noise must be >= 0, got {self.init_noise}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "steps": self.steps,
            "proposals_per_gt": self.proposals_per_gt,
            "init_noise": self.init_noise,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "OptimizerConfig":
        if not isinstance(data, dict):
            raise ValueError("optimizer config must be a JSON object")
        known = {"learning_rate", "steps", "proposals_per_gt", "init_noise", "seed"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown optimizer config fields: {sorted(unknown)}")
        return cls(**data)


def _clip_away(r: Box, occluder: Box) -> Box:
    """Largest axis-aligned piece of ``r`` not covered by ``occluder``."""
    if intersection_area(r, occluder) <= 0.0:
        return r
    candidates = []
    if occluder.left > r.left:
        candidates.append(Box(r.left, r.top, occluder.left - r.left, r.height))
    if occluder.right < r.right:
        candidates.append(Box(occluder.right, r.top, r.right - occluder.right, r.height))
    if occluder.top > r.top:
        candidates.append(Box(r.left, r.top, r.width, occluder.top - r.top))
    if occluder.bottom < r.bottom:
        candidates.append(Box(r.left, occluder.bottom, r.width, r.bottom - occluder.bottom))
    if not candidates:
        return Box(r.left, r.top, 0.0, 0.0)  # fully covered
    best = candidates[0]
    for c in candidates[1:]:
        if area(c) > area(best):
            best = c
    return best


def generate_scene(cfg: SceneConfig) -> list[Annotation]:
    """Place ground-truth boxes so each overlaps its predecessor in the target band.

    Later boxes occlude earlier ones; the visible box of each annotation is
    the largest rectangle left after clipping away all later boxes.
    """
    rng = np.random.default_rng([cfg.seed, _SCENE_STREAM])
    lo, hi = cfg.overlap_range
    extent_w, extent_h = cfg.scene_extent
    boxes: list[Box] = []
    for k in range(cfg.num_gts):
        placed = None
        for _ in range(_PLACEMENT_ATTEMPTS):
            w = float(rng.uniform(*cfg.gt_size_range))
            h = float(rng.uniform(*cfg.gt_size_range))
            if k == 0:
                left = float(rng.uniform(0.0, extent_w - w))
                top = float(rng.uniform(0.0, extent_h - h))
                placed = Box(left, top, w, h)
                break
            prev = boxes[k - 1]
            left = prev.left + float(rng.uniform(-0.9, 0.9)) * prev.width
            top = prev.top + float(rng.uniform(-0.9, 0.9)) * prev.height
            left = min(max(left, 0.0), extent_w - w)
            top = min(max(top, 0.0), extent_h - h)
            candidate = Box(left, top, w, h)
            if lo <= iou(candidate, prev) <= hi:
                placed = candidate
                break
        if placed is None:
            raise SceneGenerationError(
                f"could not place ground truth {k} within {_PLACEMENT_ATTEMPTS} "
                f"attempts (seed={cfg.seed}, overlap_range={cfg.overlap_range})"
            )
        boxes.append(placed)

    annotations = []
    for i, box in enumerate(boxes):
        visible = box
        for j in range(i + 1, len(boxes)):
            visible = _clip_away(visible, boxes[j])
        annotations.append(Annotation(id=f"g{i}", box=box, visible_box=visible))
    return annotations


def generate_proposals(
    scene: Sequence[Annotation],
    opt_cfg: OptimizerConfig,
    iou_threshold: float = 0.5,
) -> tuple[list[Box], AssignmentSet]:
    """Jittered copies of each ground truth, labeled by the assignment rules.

    Each proposal is re-jittered until it keeps at least the positive
    threshold of overlap with its source box, within a bounded budget.
    """
    rng = np.random.default_rng([opt_cfg.seed, _PROPOSAL_STREAM])
    gts = [a.box for a in scene if not a.ignore]
    if not gts:
        raise SceneGenerationError("scene has no usable ground truths")
    proposals: list[Box] = []
    for gi, gt in enumerate(gts):
        for pi in range(opt_cfg.proposals_per_gt):
            for _ in range(_JITTER_ATTEMPTS):
                d = rng.uniform(-opt_cfg.init_noise, opt_cfg.init_noise, size=4)
                w = gt.width + float(d[2])
                h = gt.height + float(d[3])
                if w <= 0.0 or h <= 0.0:
                    continue
                candidate = Box(gt.left + float(d[0]), gt.top + float(d[1]), w, h)
                if iou(candidate, gt) >= iou_threshold:
                    proposals.append(candidate)
                    break
            else:
                raise SceneGenerationError(
                    f"could not jitter proposal {pi} for ground truth {gi} within "
                    f"{_JITTER_ATTEMPTS} attempts (init_noise={opt_cfg.init_noise})"
                )
    return proposals, assign(proposals, gts, iou_threshold)


@dataclass(frozen=True)
class TrajectoryStep:
    boxes: tuple[Box, ...]
    loss: LossBreakdown


@dataclass(frozen=True)
class Trajectory:
    """Descent record over the positive proposals of one scene."""

    initial_boxes: tuple[Box, ...]
    steps: tuple[TrajectoryStep, ...]
    assignment: AssignmentSet
    detections: tuple[Detection, ...]

    @property
    def final_boxes(self) -> tuple[Box, ...]:
        return self.steps[-1].boxes if self.steps else self.initial_boxes

    @property
    def losses(self) -> list[LossBreakdown]:
        return [s.loss for s in self.steps]


def optimize(
    proposals: Sequence[Box],
    scene: Sequence[Annotation],
    loss_cfg: LossConfig,
    opt_cfg: OptimizerConfig,
    assignment: AssignmentSet | None = None,
    iou_threshold: float = 0.5,
) -> Trajectory:
    """Fixed-step gradient descent of the combined loss over predicted boxes.

    The assignment (targets, repulsion targets, groups) is computed from
    the initial proposals and stays fixed while the predictions move. Box
    extents are clamped at zero to stay representable.
    """
    gts = [a.box for a in scene if not a.ignore]
    if assignment is None:
        assignment = assign(proposals, gts, iou_threshold)
    positives = assignment.positive_indices
    if not positives:
        raise SimulationError("no positive proposals to optimize")
    boxes = [proposals[i] for i in positives]
    targets = [gts[assignment.target_of[i]] for i in positives]
    reps = [
        gts[r] if (r := assignment.rep_target_of[i]) is not None else None
        for i in positives
    ]
    groups = [assignment.partition[i] for i in positives]

    lr = opt_cfg.learning_rate
    steps: list[TrajectoryStep] = []
    for step in range(opt_cfg.steps):
        grads = total_loss_gradient(boxes, targets, reps, groups, loss_cfg)
        new_boxes = []
        for b, g in zip(boxes, grads.per_box):
            if not all(math.isfinite(v) for v in g.as_tuple()):
                raise SimulationError(f"non-finite gradient at step {step}")
            new_boxes.append(
                Box(
                    b.left - lr * g.d_left,
                    b.top - lr * g.d_top,
                    max(0.0, b.width - lr * g.d_width),
                    max(0.0, b.height - lr * g.d_height),
                )
            )
        boxes = new_boxes
        breakdown = total_loss(boxes, targets, reps, groups, loss_cfg)
        if not math.isfinite(breakdown.total):
            raise SimulationError(f"non-finite loss at step {step}")
        steps.append(TrajectoryStep(boxes=tuple(boxes), loss=breakdown))

    detections = tuple(
        Detection(box=b, score=min(1.0, max(0.0, iou(b, t))))
        for b, t in zip(boxes, targets)
    )
    return Trajectory(
        initial_boxes=tuple(proposals[i] for i in positives),
        steps=tuple(steps),
        assignment=assignment,
        detections=detections,
    )


def nms_sensitivity_sweep(
    detections: Sequence[Detection],
    thresholds: Sequence[float],
    scene: Sequence[Annotation],
    match_iou: float = 0.5,
) -> list[tuple[float, int, int]]:
    """Detected-ground-truth and false-positive counts after NMS at each threshold."""
    results = []
    for t in thresholds:
        kept = greedy_nms(detections, t)
        match = match_detections(kept, scene, match_iou)
        results.append((t, len(match.tp), len(match.fp)))
    return results


@dataclass(frozen=True)
class SceneRun:
    scene: tuple[Annotation, ...]
    proposals: tuple[Box, ...]
    assignment: AssignmentSet
    trajectory: Trajectory


def run_scene(
    scene_cfg: SceneConfig, loss_cfg: LossConfig, opt_cfg: OptimizerConfig
) -> SceneRun:
    """Scene -> proposals -> descent, as one deterministic pipeline."""
    scene = generate_scene(scene_cfg)
    proposals, assignment = generate_proposals(scene, opt_cfg)
    trajectory = optimize(proposals, scene, loss_cfg, opt_cfg, assignment=assignment)
    return SceneRun(
        scene=tuple(scene),
        proposals=tuple(proposals),
        assignment=assignment,
        trajectory=trajectory,
    )


@dataclass(frozen=True)
class RunMetrics:
    """Per-run statistics used by the paired comparisons.

    ``mean_repulsion_iog`` and ``mean_cross_group_iou`` are NaN when the
    scene offers no repulsion targets or no cross-group pairs.
    """

    mean_repulsion_iog: float
    missed_after_nms: int
    detected_count_variance: float
    mean_cross_group_iou: float

    def to_dict(self) -> dict:
        return {
            "mean_repulsion_iog": self.mean_repulsion_iog,
            "missed_after_nms": self.missed_after_nms,
            "detected_count_variance": self.detected_count_variance,
            "mean_cross_group_iou": self.mean_cross_group_iou,
        }


def run_metrics(
    run: SceneRun,
    nms_threshold: float = 0.5,
    match_iou: float = 0.5,
    sweep_thresholds: Sequence[float] = DEFAULT_NMS_SWEEP_THRESHOLDS,
) -> RunMetrics:
    gts = [a.box for a in run.scene if not a.ignore]
    assignment = run.assignment
    positives = assignment.positive_indices
    final = run.trajectory.final_boxes

    iogs = [
        iog(final[k], gts[rep])
        for k, i in enumerate(positives)
        if (rep := assignment.rep_target_of[i]) is not None
    ]
    mean_iog = math.fsum(iogs) / len(iogs) if iogs else math.nan

    kept = greedy_nms(run.trajectory.detections, nms_threshold)
    match = match_detections(kept, run.scene, match_iou)
    missed = match.n_eval_gts - len(match.tp)

    counts = [
        detected
        for _, detected, _ in nms_sensitivity_sweep(
            run.trajectory.detections, sweep_thresholds, run.scene, match_iou
        )
    ]
    variance = statistics.pvariance(counts) if len(counts) > 1 else 0.0

    groups = [assignment.partition[i] for i in positives]
    cross = [
        iou(final[a], final[b])
        for a in range(len(final))
        for b in range(a + 1, len(final))
        if groups[a] != groups[b]
    ]
    mean_cross = math.fsum(cross) / len(cross) if cross else math.nan

    return RunMetrics(
        mean_repulsion_iog=mean_iog,
        missed_after_nms=missed,
        detected_count_variance=variance,
        mean_cross_group_iou=mean_cross,
    )


@dataclass(frozen=True)
class PairedResult:
    seed: int
    baseline: RunMetrics
    variant: RunMetrics


def paired_comparison(
    scene_cfg: SceneConfig,
    opt_cfg: OptimizerConfig,
    baseline_cfg: LossConfig,
    variant_cfg: LossConfig,
    seeds: Sequence[int],
    sweep_thresholds: Sequence[float] = DEFAULT_NMS_SWEEP_THRESHOLDS,
) -> list[PairedResult]:
    """Optimize each seeded scene twice, from identical initialization."""
    results = []
    for s in seeds:
        sc = replace(scene_cfg, seed=scene_cfg.seed + s)
        oc = replace(opt_cfg, seed=opt_cfg.seed + s)
        scene = generate_scene(sc)
        proposals, assignment = generate_proposals(scene, oc)
        runs = []
        for cfg in (baseline_cfg, variant_cfg):
            trajectory = optimize(proposals, scene, cfg, oc, assignment=assignment)
            runs.append(
                SceneRun(tuple(scene), tuple(proposals), assignment, trajectory)
            )
        results.append(
            PairedResult(
                seed=s,
                baseline=run_metrics(runs[0], sweep_thresholds=sweep_thresholds),
                variant=run_metrics(runs[1], sweep_thresholds=sweep_thresholds),
            )
        )
    return results


@dataclass(frozen=True)
class SigmaGridCell:
    term: str
    sigma: float
    mean_repulsion_iog: float
    mean_missed: float
    mean_detected_variance: float
    mean_cross_group_iou: float


def sigma_grid(
    scene_cfg: SceneConfig,
    opt_cfg: OptimizerConfig,
    seeds: Sequence[int],
    alpha: float = 0.5,
    beta: float = 0.5,
    sigmas: Sequence[float] = (0.0, 0.5, 1.0),
    sweep_thresholds: Sequence[float] = DEFAULT_NMS_SWEEP_THRESHOLDS,
) -> list[SigmaGridCell]:
    """Run each repulsion term alone at each smoothing level, averaged over seeds."""
    prepared = []
    for s in seeds:
        sc = replace(scene_cfg, seed=scene_cfg.seed + s)
        oc = replace(opt_cfg, seed=opt_cfg.seed + s)
        scene = generate_scene(sc)
        proposals, assignment = generate_proposals(scene, oc)
        prepared.append((scene, proposals, assignment, oc))

    cells = []
    for term in ("repgt", "repbox"):
        for sigma in sigmas:
            if term == "repgt":
                cfg = LossConfig(alpha=alpha, beta=0.0, sigma_gt=sigma)
            else:
                cfg = LossConfig(alpha=0.0, beta=beta, sigma_box=sigma)
            metrics = []
            for scene, proposals, assignment, oc in prepared:
                trajectory = optimize(proposals, scene, cfg, oc, assignment=assignment)
                run = SceneRun(tuple(scene), tuple(proposals), assignment, trajectory)
                metrics.append(run_metrics(run, sweep_thresholds=sweep_thresholds))
            cells.append(
                SigmaGridCell(
                    term=term,
                    sigma=sigma,
                    mean_repulsion_iog=_nanmean([m.mean_repulsion_iog for m in metrics]),
                    mean_missed=math.fsum(m.missed_after_nms for m in metrics) / len(metrics),
                    mean_detected_variance=math.fsum(
                        m.detected_count_variance for m in metrics
                    )
                    / len(metrics),
                    mean_cross_group_iou=_nanmean(
                        [m.mean_cross_group_iou for m in metrics]
                    ),
                )
            )
    return cells


def _nanmean(values: Sequence[float]) -> float:
    finite = [v for v in values if not math.isnan(v)]
    return math.fsum(finite) / len(finite) if finite else math.nan
