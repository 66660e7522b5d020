"""Proposal labeling: positives, designated targets, repulsion targets.

A proposal is positive when it overlaps some ground truth at or above the
IoU threshold. Each positive gets the ground truth it overlaps most as its
designated target, and the runner-up ground truth (largest IoU among the
rest, even if zero) as its repulsion target. Positives are partitioned into
groups by designated target; all ties break toward the lowest index so the
whole labeling is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .geometry import Box, iou

__all__ = [
    "AssignmentSet",
    "select_positives",
    "designate_targets",
    "repulsion_targets",
    "partition_by_target",
    "assign",
]


@dataclass(frozen=True)
class AssignmentSet:
    positive_indices: tuple[int, ...]
    target_of: dict[int, int]
    rep_target_of: dict[int, int | None]
    partition: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "positive_indices": list(self.positive_indices),
            "target_of": {str(i): t for i, t in self.target_of.items()},
            "rep_target_of": {str(i): r for i, r in self.rep_target_of.items()},
            "partition": {str(i): g for i, g in self.partition.items()},
        }


def select_positives(
    proposals: Sequence[Box], gts: Sequence[Box], iou_threshold: float = 0.5
) -> list[int]:
    """Indices of proposals whose best ground-truth IoU reaches the threshold."""
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if not gts:
        return []
    return [
        i
        for i, p in enumerate(proposals)
        if max(iou(p, g) for g in gts) >= iou_threshold
    ]


def _argmax_iou(p: Box, gts: Sequence[Box], skip: int | None = None) -> int:
    best_index = -1
    best_value = -1.0
    for j, g in enumerate(gts):
        if j == skip:
            continue
        v = iou(p, g)
        if v > best_value:  # strict: ties keep the lowest index
            best_index, best_value = j, v
    return best_index


def designate_targets(
    positives: Sequence[int], proposals: Sequence[Box], gts: Sequence[Box]
) -> dict[int, int]:
    """Designated target per positive: the ground truth with maximum IoU."""
    if not gts:
        raise ValueError("cannot designate targets without ground truths")
    return {i: _argmax_iou(proposals[i], gts) for i in positives}


def repulsion_targets(
    positives: Sequence[int],
    proposals: Sequence[Box],
    gts: Sequence[Box],
    target_of: Mapping[int, int],
) -> dict[int, int | None]:
    """Runner-up ground truth per positive, excluding its designated target.

    Absent when only one ground truth exists; otherwise always present,
    possibly with zero overlap.
    """
    result: dict[int, int | None] = {}
    for i in positives:
        if len(gts) < 2:
            result[i] = None
        else:
            result[i] = _argmax_iou(proposals[i], gts, skip=target_of[i])
    return result


def partition_by_target(target_of: Mapping[int, int]) -> dict[int, int]:
    """Group id per positive; groups coincide with designated targets."""
    return dict(target_of)


def assign(
    proposals: Sequence[Box], gts: Sequence[Box], iou_threshold: float = 0.5
) -> AssignmentSet:
    """Run the full labeling pipeline over one scene."""
    positives = select_positives(proposals, gts, iou_threshold)
    target_of = designate_targets(positives, proposals, gts) if positives else {}
    rep_target_of = repulsion_targets(positives, proposals, gts, target_of)
    partition = partition_by_target(target_of)
    return AssignmentSet(
        positive_indices=tuple(positives),
        target_of=target_of,
        rep_target_of=rep_target_of,
        partition=partition,
    )
