"""Greedy non-maximum suppression over scored detections."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .geometry import Box, iou

__all__ = ["Detection", "greedy_nms"]


@dataclass(frozen=True, slots=True)
class Detection:
    box: Box
    score: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0, 1], got {self.score}")


def greedy_nms(dets: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Keep the best-scored detections, dropping overlaps above the threshold.

    Detections are visited in descending score order (ties keep input
    order); each kept detection suppresses every remaining one whose IoU
    with it is strictly greater than ``iou_threshold``. The result preserves
    descending-score order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must be in [0, 1], got {iou_threshold}")
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    suppressed = [False] * len(dets)
    kept: list[Detection] = []
    for pos, i in enumerate(order):
        if suppressed[i]:
            continue
        kept.append(dets[i])
        for j in order[pos + 1 :]:
            if not suppressed[j] and iou(dets[i].box, dets[j].box) > iou_threshold:
                suppressed[j] = True
    return kept
