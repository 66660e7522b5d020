"""Crowd-occlusion evaluation: subsets, matching, miss-rate curves, error taxonomy.

Ground-truth annotations carry a full box, an optional visible box, an
ignore flag for non-pedestrian regions, and an ``in_eval`` flag for
dataset-specific filtering (height cutoffs and the like, applied during
data preparation). Occlusion is one minus the visible-to-full area ratio.

Evaluation matches detections to ground truths greedily in descending
score order, one-to-one, which gives the prefix property: the outcome of a
detection depends only on higher-scored ones, so a single matching pass
supports every score threshold. Detections whose only qualifying overlap
is an ignored annotation are neither true nor false positives; annotations
outside the evaluated subset are treated the same way as ignored regions.

The summary metric is the geometric mean of the miss rate sampled at nine
log-uniform false-positives-per-image reference points in [1e-2, 1].
"""

from __future__ import annotations

import math
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .geometry import Box, area, iou
from .nms import Detection

__all__ = [
    "Annotation",
    "SubsetSpec",
    "SUBSETS",
    "EvalReport",
    "ImageMatch",
    "MatchedDetection",
    "FalsePositive",
    "FpTaxonomy",
    "occlusion_ratio",
    "occlusion_subset",
    "match_detections",
    "fppi_missrate_curve",
    "log_average_miss_rate",
    "classify_false_positives",
    "fp_category",
    "missed_by_score",
    "evaluate",
    "FPPI_RANGE",
    "NUM_REFERENCE_POINTS",
    "MISS_RATE_FLOOR",
    "FP_OVERLAP_THRESHOLD",
    "DEFAULT_SCORE_GRID",
]

# Protocol constants: reference-point layout of the log-average miss rate
# and the overlap level at which a false positive "touches" a pedestrian.
FPPI_RANGE = (1e-2, 1.0)
NUM_REFERENCE_POINTS = 9
MISS_RATE_FLOOR = 1e-10
FP_OVERLAP_THRESHOLD = 0.1
DEFAULT_SCORE_GRID = tuple(k / 10 for k in range(11))


@dataclass(frozen=True)
class Annotation:
    """One annotated object: full box, optional visible box, eval flags."""

    id: str
    box: Box
    visible_box: Box | None = None
    ignore: bool = False
    in_eval: bool = True


@dataclass(frozen=True)
class SubsetSpec:
    """Occlusion band plus an optional crowdedness requirement.

    ``occ_min_exclusive`` switches the lower occlusion bound from >= to >,
    needed because some named bands share a boundary value with different
    conventions. When ``crowd_iou_min`` is set, membership additionally
    requires overlap at or above that IoU with another non-ignored
    annotation of the same image.
    """

    occ_min: float
    occ_max: float
    crowd_iou_min: float | None = None
    occ_min_exclusive: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.occ_min <= self.occ_max <= 1.0:
            raise ValueError(
                f"need 0 <= occ_min <= occ_max <= 1, got [{self.occ_min}, {self.occ_max}]"
            )


SUBSETS: dict[str, SubsetSpec] = {
    "all": SubsetSpec(0.0, 1.0),
    "reasonable": SubsetSpec(0.0, 0.35),
    "occ": SubsetSpec(0.1, 1.0),
    "crowd": SubsetSpec(0.1, 1.0, crowd_iou_min=0.1),
    "partial": SubsetSpec(0.1, 0.35, occ_min_exclusive=True),
    "bare": SubsetSpec(0.0, 0.1),
    "heavy": SubsetSpec(0.35, 1.0, occ_min_exclusive=True),
}


def occlusion_ratio(a: Annotation) -> float:
    """Occluded fraction: 1 - visible area / full area; 0 without a visible box."""
    full = area(a.box)
    if full <= 0.0:
        raise ValueError(f"annotation {a.id!r} has zero-area box")
    if a.visible_box is None:
        return 0.0
    ratio = 1.0 - area(a.visible_box) / full
    return min(max(ratio, 0.0), 1.0)


def occlusion_subset(anns: Sequence[Annotation], spec: SubsetSpec) -> list[Annotation]:
    """Non-ignored annotations inside the occlusion band of ``spec``.

    The crowdedness requirement, when present, is checked against all other
    non-ignored annotations of the input.
    """
    candidates = [a for a in anns if not a.ignore]
    members = []
    for a in candidates:
        occ = occlusion_ratio(a)
        if spec.occ_min_exclusive:
            if not spec.occ_min < occ <= spec.occ_max:
                continue
        elif not spec.occ_min <= occ <= spec.occ_max:
            continue
        if spec.crowd_iou_min is not None:
            neighbors = (iou(a.box, other.box) for other in candidates if other is not a)
            if not any(v >= spec.crowd_iou_min for v in neighbors):
                continue
        members.append(a)
    return members


@dataclass(frozen=True)
class MatchedDetection:
    det_index: int
    gt_index: int
    score: float
    overlap: float


@dataclass(frozen=True)
class FalsePositive:
    det_index: int
    score: float
    box: Box


@dataclass(frozen=True)
class ImageMatch:
    """Matching outcome for one image at one IoU threshold."""

    eval_gt_indices: tuple[int, ...]
    tp: tuple[MatchedDetection, ...]
    fp: tuple[FalsePositive, ...]
    ignored: tuple[int, ...]

    @property
    def n_eval_gts(self) -> int:
        return len(self.eval_gt_indices)

    def gt_match_scores(self) -> dict[int, float]:
        return {m.gt_index: m.score for m in self.tp}

    @property
    def missed_gt_indices(self) -> tuple[int, ...]:
        matched = {m.gt_index for m in self.tp}
        return tuple(i for i in self.eval_gt_indices if i not in matched)


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[Annotation],
    iou_threshold: float = 0.5,
) -> ImageMatch:
    """Greedy one-to-one matching in descending score order.

    A detection takes the highest-IoU unmatched evaluated ground truth with
    IoU at or above the threshold (ties toward the lower ground-truth
    index). Failing that, overlap at threshold with any ignored annotation
    marks the detection ignored; otherwise it is a false positive.
    Annotations with ``ignore`` set or ``in_eval`` cleared act as ignore
    regions.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    eval_idx = [i for i, a in enumerate(gts) if not a.ignore and a.in_eval]
    ignore_idx = [i for i, a in enumerate(gts) if a.ignore or not a.in_eval]
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)

    matched = set()
    tp: list[MatchedDetection] = []
    fp: list[FalsePositive] = []
    ignored: list[int] = []
    for d in order:
        det = dets[d]
        best_gt = -1
        best_v = 0.0
        for j in eval_idx:
            if j in matched:
                continue
            v = iou(det.box, gts[j].box)
            if v >= iou_threshold and v > best_v:
                best_gt, best_v = j, v
        if best_gt >= 0:
            matched.add(best_gt)
            tp.append(MatchedDetection(d, best_gt, det.score, best_v))
        elif any(iou(det.box, gts[j].box) >= iou_threshold for j in ignore_idx):
            ignored.append(d)
        else:
            fp.append(FalsePositive(d, det.score, det.box))
    return ImageMatch(
        eval_gt_indices=tuple(eval_idx),
        tp=tuple(tp),
        fp=tuple(fp),
        ignored=tuple(ignored),
    )


def fppi_missrate_curve(
    matches: Sequence[ImageMatch],
    thresholds: Sequence[float] | None = None,
) -> list[tuple[float, float]]:
    """Operating points (false positives per image, miss rate) over score thresholds.

    Sweeps the unique detection scores by default. Returns the lower
    envelope: strictly increasing fppi, keeping the best miss rate at each.
    A detector that emitted nothing yields the single point (0, 1).
    """
    if not matches:
        raise ValueError("at least one image is required")
    total_gts = sum(m.n_eval_gts for m in matches)
    if total_gts == 0:
        raise ValueError("no ground truths in the evaluated subset")
    n_images = len(matches)
    tp_scores = sorted(m_.score for m in matches for m_ in m.tp)
    fp_scores = sorted(f.score for m in matches for f in m.fp)
    if thresholds is None:
        thresholds = sorted({*tp_scores, *fp_scores}, reverse=True)
    else:
        thresholds = sorted(set(thresholds), reverse=True)
    if not thresholds:
        return [(0.0, 1.0)]

    points: list[tuple[float, float]] = []
    for s in thresholds:
        n_tp = len(tp_scores) - bisect_left(tp_scores, s)
        n_fp = len(fp_scores) - bisect_left(fp_scores, s)
        fppi = n_fp / n_images
        miss = (total_gts - n_tp) / total_gts
        if points and points[-1][0] == fppi:
            points[-1] = (fppi, min(points[-1][1], miss))
        else:
            points.append((fppi, miss))
    return points


def log_average_miss_rate(curve: Sequence[tuple[float, float]]) -> float:
    """Geometric mean of the miss rate at nine log-spaced fppi references.

    Each reference takes the miss rate of the rightmost curve point at or
    below it, or 1.0 when the curve starts to its right. Miss rates are
    floored at a small positive constant inside the log.
    """
    if not curve:
        raise ValueError("curve must be nonempty")
    fppis = [p[0] for p in curve]
    if any(b < a for a, b in zip(fppis, fppis[1:])):
        raise ValueError("curve fppi values must be sorted ascending")
    lo, hi = FPPI_RANGE
    step = (math.log10(hi) - math.log10(lo)) / (NUM_REFERENCE_POINTS - 1)
    logs = []
    for k in range(NUM_REFERENCE_POINTS):
        ref = 10.0 ** (math.log10(lo) + step * k)
        idx = bisect_right(fppis, ref)
        miss = 1.0 if idx == 0 else curve[idx - 1][1]
        logs.append(math.log(max(miss, MISS_RATE_FLOOR)))
    return math.exp(math.fsum(logs) / NUM_REFERENCE_POINTS)


@dataclass(frozen=True)
class FpTaxonomy:
    """False positives split by how many pedestrians they touch."""

    background: int
    localization: int
    crowd: int

    @property
    def total(self) -> int:
        return self.background + self.localization + self.crowd

    @property
    def crowd_fraction(self) -> float:
        return self.crowd / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "background": self.background,
            "localization": self.localization,
            "crowd": self.crowd,
            "crowd_fraction": self.crowd_fraction,
        }


def fp_category(fp_box: Box, gt_boxes: Sequence[Box]) -> str:
    """Label one false positive by its qualifying ground-truth overlaps."""
    touched = sum(1 for g in gt_boxes if iou(fp_box, g) >= FP_OVERLAP_THRESHOLD)
    if touched == 0:
        return "background"
    if touched == 1:
        return "localization"
    return "crowd"


def classify_false_positives(
    fps: Sequence[Box], gts: Sequence[Box]
) -> FpTaxonomy:
    """Count background / localization / crowd errors among false positives."""
    counts = {"background": 0, "localization": 0, "crowd": 0}
    for box in fps:
        counts[fp_category(box, gts)] += 1
    return FpTaxonomy(**counts)


def missed_by_score(
    dets: Sequence[Detection],
    gts: Sequence[Annotation],
    subset: SubsetSpec | str,
    iou_threshold: float = 0.5,
    score_grid: Sequence[float] = DEFAULT_SCORE_GRID,
) -> list[tuple[float, int]]:
    """Subset ground truths missed at each score threshold, for one image."""
    spec = _resolve_subset(subset)
    restricted = _restrict_to_subset(gts, spec)
    match = match_detections(dets, restricted, iou_threshold)
    return _missed_from_matches([match], score_grid)


def _missed_from_matches(
    matches: Sequence[ImageMatch], score_grid: Sequence[float]
) -> list[tuple[float, int]]:
    matched_scores = sorted(
        m_.score for match in matches for m_ in match.tp
    )
    total = sum(m.n_eval_gts for m in matches)
    result = []
    for s in score_grid:
        found = len(matched_scores) - bisect_left(matched_scores, s)
        result.append((s, total - found))
    return result


def _resolve_subset(subset: SubsetSpec | str) -> SubsetSpec:
    if isinstance(subset, SubsetSpec):
        return subset
    try:
        return SUBSETS[subset]
    except KeyError:
        raise ValueError(
            f"unknown subset {subset!r}; expected one of {sorted(SUBSETS)}"
        ) from None


def _restrict_to_subset(
    anns: Sequence[Annotation], spec: SubsetSpec
) -> list[Annotation]:
    """Re-flag annotations outside the subset as ignore regions."""
    eligible = [a for a in anns if a.in_eval and not a.ignore]
    member_ids = {id(a) for a in occlusion_subset(eligible, spec)}
    return [
        a if (a.ignore or not a.in_eval or id(a) in member_ids) else replace(a, ignore=True)
        for a in anns
    ]


@dataclass(frozen=True)
class EvalReport:
    """Aggregate evaluation result over a dataset."""

    curve: tuple[tuple[float, float], ...]
    mr2: float
    fp_taxonomy: FpTaxonomy
    missed_by_score: tuple[tuple[float, int], ...]
    fp_crowd_fraction_by_score: tuple[tuple[float, float, int], ...]
    n_images: int
    n_gts: int


def evaluate(
    annotations_by_image: Mapping[str, Sequence[Annotation]],
    detections_by_image: Mapping[str, Sequence[Detection]],
    subset: SubsetSpec | str = "reasonable",
    iou_threshold: float = 0.5,
    score_grid: Sequence[float] = DEFAULT_SCORE_GRID,
) -> EvalReport:
    """Match all images, then aggregate the curve, summary metric, and error counts.

    False positives are classified against every non-ignored annotation of
    their image, whether or not it belongs to the evaluated subset.
    """
    spec = _resolve_subset(subset)
    matches: list[ImageMatch] = []
    labeled_fps: list[tuple[float, str]] = []
    for image_id, anns in annotations_by_image.items():
        dets = list(detections_by_image.get(image_id, ()))
        restricted = _restrict_to_subset(anns, spec)
        match = match_detections(dets, restricted, iou_threshold)
        matches.append(match)
        pedestrians = [a.box for a in anns if not a.ignore]
        labeled_fps.extend(
            (f.score, fp_category(f.box, pedestrians)) for f in match.fp
        )

    curve = fppi_missrate_curve(matches)
    mr2 = log_average_miss_rate(curve)
    counts = {"background": 0, "localization": 0, "crowd": 0}
    for _, label in labeled_fps:
        counts[label] += 1
    taxonomy = FpTaxonomy(**counts)

    crowd_sweep = []
    fp_scores = sorted(s for s, _ in labeled_fps)
    crowd_scores = sorted(s for s, label in labeled_fps if label == "crowd")
    for s in score_grid:
        n_all = len(fp_scores) - bisect_left(fp_scores, s)
        n_crowd = len(crowd_scores) - bisect_left(crowd_scores, s)
        crowd_sweep.append((s, n_crowd / n_all if n_all else 0.0, n_all))

    return EvalReport(
        curve=tuple(curve),
        mr2=mr2,
        fp_taxonomy=taxonomy,
        missed_by_score=tuple(_missed_from_matches(matches, score_grid)),
        fp_crowd_fraction_by_score=tuple(crowd_sweep),
        n_images=len(matches),
        n_gts=sum(m.n_eval_gts for m in matches),
    )
