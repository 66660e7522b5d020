import numpy as np
import pytest

from crowdbox.geometry import Box
from crowdbox.nms import Detection, greedy_nms


def corner_iou(b1: Box, b2: Box) -> float:
    """Corner-form IoU, written independently of the geometry module."""
    ax1, ay1, ax2, ay2 = b1.left, b1.top, b1.left + b1.width, b1.top + b1.height
    bx1, by1, bx2, by2 = b2.left, b2.top, b2.left + b2.width, b2.top + b2.height
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union if union > 0 else 0.0


def reference_nms(dets, threshold):
    """Brute-force oracle: repeatedly take the best remaining detection
    (first on score ties) and drop everything overlapping it too much."""
    remaining = list(range(len(dets)))
    keep = []
    while remaining:
        best = max(remaining, key=lambda i: (dets[i].score, -i))
        keep.append(best)
        remaining = [
            i
            for i in remaining
            if i != best and corner_iou(dets[i].box, dets[best].box) <= threshold
        ]
    return [dets[i] for i in keep]


def random_detections(rng, max_count=10):
    count = int(rng.integers(0, max_count + 1))
    dets = []
    for _ in range(count):
        box = Box(
            float(rng.uniform(0, 4)),
            float(rng.uniform(0, 4)),
            float(rng.uniform(0.3, 3)),
            float(rng.uniform(0.3, 3)),
        )
        # quantized scores exercise the tie-break path
        score = round(float(rng.uniform(0, 1)), 1)
        dets.append(Detection(box=box, score=score))
    return dets


class TestDetection:
    def test_score_bounds_enforced(self):
        with pytest.raises(ValueError):
            Detection(Box(0, 0, 1, 1), 1.5)
        with pytest.raises(ValueError):
            Detection(Box(0, 0, 1, 1), -0.1)


class TestGreedyNms:
    def test_empty(self):
        assert greedy_nms([], 0.5) == []

    def test_single_detection_survives(self):
        d = Detection(Box(0, 0, 1, 1), 0.7)
        assert greedy_nms([d], 0.5) == [d]

    def test_duplicate_suppressed(self):
        a = Detection(Box(0, 0, 2, 2), 0.9)
        b = Detection(Box(0, 0, 2, 2), 0.8)
        assert greedy_nms([a, b], 0.5) == [a]

    def test_threshold_straddle(self):
        # iou = 1/7 ~ 0.143 sits between the two thresholds
        a = Detection(Box(0, 0, 2, 2), 0.9)
        b = Detection(Box(1, 1, 2, 2), 0.8)
        assert greedy_nms([a, b], 0.1) == [a]
        assert greedy_nms([a, b], 0.2) == [a, b]

    def test_suppression_is_strict(self):
        a = Detection(Box(0, 0, 2, 2), 0.9)
        b = Detection(Box(1, 1, 2, 2), 0.8)  # iou exactly 1/7
        assert greedy_nms([a, b], 1 / 7) == [a, b]

    def test_score_ties_keep_input_order(self):
        a = Detection(Box(0, 0, 2, 2), 0.8)
        b = Detection(Box(0.2, 0, 2, 2), 0.8)
        kept = greedy_nms([a, b], 0.3)
        assert kept == [a]

    def test_output_sorted_by_score(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            dets = random_detections(rng)
            kept = greedy_nms(dets, 0.4)
            scores = [d.score for d in kept]
            assert scores == sorted(scores, reverse=True)

    def test_bad_threshold_rejected(self):
        with pytest.raises(ValueError):
            greedy_nms([], 1.5)


class TestAgainstBruteForce:
    def test_matches_reference_exactly(self):
        rng = np.random.default_rng(1234)
        for _ in range(2000):
            dets = random_detections(rng)
            threshold = float(rng.uniform(0, 1))
            assert greedy_nms(dets, threshold) == reference_nms(dets, threshold)

    def test_idempotent(self):
        rng = np.random.default_rng(77)
        for _ in range(500):
            dets = random_detections(rng)
            threshold = float(rng.uniform(0, 1))
            once = greedy_nms(dets, threshold)
            assert greedy_nms(once, threshold) == once

    def test_threshold_monotonicity(self):
        # monotone in count: a laxer threshold never keeps fewer detections
        rng = np.random.default_rng(55)
        for _ in range(300):
            dets = random_detections(rng)
            t1, t2 = sorted(rng.uniform(0, 1, size=2))
            low = greedy_nms(dets, float(t1))
            high = greedy_nms(dets, float(t2))
            assert len(high) >= len(low)

    def test_top_detection_always_survives(self):
        rng = np.random.default_rng(9)
        for _ in range(200):
            dets = random_detections(rng)
            if not dets:
                continue
            kept = greedy_nms(dets, float(rng.uniform(0, 1)))
            best = max(dets, key=lambda d: d.score)
            assert kept[0].score == best.score
