"""Box-regression losses that both attract and repel.

The total objective combines three terms over the positive proposals of a
scene:

* an attraction term: per-coordinate smoothed-L1 distance between each
  predicted box and its designated target, averaged over proposals;
* a ground-truth repulsion term: a smoothed log penalty on the overlap
  (intersection over target area) between each predicted box and the
  non-target ground truth it overlaps most, averaged over proposals;
* a box repulsion term: the same smoothed log penalty on the pairwise IoU
  of predictions assigned to different targets, normalized by the number
  of actually overlapping cross-group pairs.

Every term has a closed-form gradient with respect to the predicted
coordinates, assembled from the geometry-level gradients.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Iterator, Sequence

from .geometry import Box, BoxGradient, iog, iog_gradient, iou, iou_gradient

__all__ = [
    "LossConfig",
    "LossBreakdown",
    "LossGradients",
    "smooth_l1",
    "smooth_ln",
    "attraction_loss",
    "repgt_loss",
    "repbox_loss",
    "total_loss",
    "total_loss_gradient",
]


@dataclass(frozen=True)
class LossConfig:
    """Weights and smoothing knobs of the combined loss.

    ``alpha`` and ``beta`` weight the two repulsion terms. ``sigma_gt`` and
    ``sigma_box`` control where the log penalty flattens into a linear tail
    for the ground-truth and box repulsion terms respectively; at 1.0 the
    penalty is the raw ``-ln(1 - x)`` and at 0.0 it is fully linear.
    """

    alpha: float = 0.5
    beta: float = 0.5
    sigma_gt: float = 1.0
    sigma_box: float = 0.0
    smooth_l1_sigma: float = 2.0
    epsilon: float = 1e-6
    ln_clamp: float = 1e-6

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise ValueError(f"beta must be finite and >= 0, got {self.beta}")
        if not 0.0 <= self.sigma_gt <= 1.0:
            raise ValueError(f"sigma_gt must be in [0, 1], got {self.sigma_gt}")
        if not 0.0 <= self.sigma_box <= 1.0:
            raise ValueError(f"sigma_box must be in [0, 1], got {self.sigma_box}")
        if self.smooth_l1_sigma <= 0:
            raise ValueError(f"smooth_l1_sigma must be positive, got {self.smooth_l1_sigma}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.ln_clamp < 1.0:
            raise ValueError(f"ln_clamp must be in (0, 1), got {self.ln_clamp}")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "sigma_gt": self.sigma_gt,
            "sigma_box": self.sigma_box,
            "smooth_l1_sigma": self.smooth_l1_sigma,
            "epsilon": self.epsilon,
            "ln_clamp": self.ln_clamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LossConfig":
        if not isinstance(data, dict):
            raise ValueError("loss config must be a JSON object")
        known = {
            "alpha",
            "beta",
            "sigma_gt",
            "sigma_box",
            "smooth_l1_sigma",
            "epsilon",
            "ln_clamp",
        }
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown loss config fields: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LossConfig":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class LossBreakdown:
    """Per-term loss values; ``total`` already applies the alpha/beta weights."""

    attraction: float
    rep_gt: float
    rep_box: float
    total: float

    def to_dict(self) -> dict:
        return {
            "attraction": self.attraction,
            "rep_gt": self.rep_gt,
            "rep_box": self.rep_box,
            "total": self.total,
        }


@dataclass(frozen=True)
class LossGradients:
    """Gradient of the total loss, one entry per positive proposal."""

    per_box: tuple[BoxGradient, ...]

    @property
    def nondifferentiable(self) -> bool:
        return any(g.nondifferentiable for g in self.per_box)

    def __len__(self) -> int:
        return len(self.per_box)

    def __iter__(self) -> Iterator[BoxGradient]:
        return iter(self.per_box)

    def __getitem__(self, index: int) -> BoxGradient:
        return self.per_box[index]


def smooth_l1(x: float, sigma: float) -> float:
    """Smoothed L1 penalty: quadratic within |x| < 1/sigma^2, linear beyond."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    sigma2 = sigma * sigma
    if abs(x) < 1.0 / sigma2:
        return 0.5 * (sigma * x) ** 2
    return abs(x) - 0.5 / sigma2


def _smooth_l1_derivative(x: float, sigma: float) -> float:
    sigma2 = sigma * sigma
    if abs(x) < 1.0 / sigma2:
        return sigma2 * x
    return math.copysign(1.0, x)


def smooth_ln(x: float, sigma: float, ln_clamp: float = 1e-6) -> float:
    """Smoothed log penalty on an overlap fraction.

    ``-ln(1 - x)`` up to ``sigma``, then continued linearly with matching
    value and slope. Inputs are overlap fractions, so ``x`` is clamped into
    [0, 1], and the log argument is kept at least ``ln_clamp`` away from
    zero so full containment stays finite.
    """
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must be in [0, 1], got {sigma}")
    x = min(max(x, 0.0), 1.0)
    if x <= sigma:
        return -math.log(1.0 - min(x, 1.0 - ln_clamp))
    return (x - sigma) / (1.0 - sigma) - math.log(1.0 - sigma)


def _smooth_ln_derivative(x: float, sigma: float, ln_clamp: float) -> float:
    x = min(max(x, 0.0), 1.0)
    if x <= sigma:
        if x >= 1.0 - ln_clamp:
            return 0.0
        return 1.0 / (1.0 - x)
    return 1.0 / (1.0 - sigma)


def _check_lengths(predicted: Sequence[Box], *others: tuple[str, Sequence]) -> None:
    for name, seq in others:
        if len(seq) != len(predicted):
            raise ValueError(
                f"{name} must match predicted boxes: {len(seq)} != {len(predicted)}"
            )


def attraction_loss(
    predicted: Sequence[Box], targets: Sequence[Box], cfg: LossConfig
) -> float:
    """Mean smoothed-L1 distance between predictions and their targets.

    The distance of one pair is the sum of per-coordinate penalties over
    (left, top, width, height).
    """
    _check_lengths(predicted, ("targets", targets))
    if not predicted:
        warnings.warn("attraction_loss over empty proposal set", RuntimeWarning, stacklevel=2)
        return 0.0
    sigma = cfg.smooth_l1_sigma
    per_box = []
    for p, t in zip(predicted, targets):
        per_box.append(
            smooth_l1(p.left - t.left, sigma)
            + smooth_l1(p.top - t.top, sigma)
            + smooth_l1(p.width - t.width, sigma)
            + smooth_l1(p.height - t.height, sigma)
        )
    return math.fsum(per_box) / len(predicted)


def repgt_loss(
    predicted: Sequence[Box], rep_targets: Sequence[Box | None], cfg: LossConfig
) -> float:
    """Mean log penalty on the overlap with each proposal's repulsion target.

    Proposals without a repulsion target (single-object scenes) contribute
    zero while still counting in the denominator.
    """
    _check_lengths(predicted, ("rep_targets", rep_targets))
    if not predicted:
        return 0.0
    terms = [
        smooth_ln(iog(p, rep), cfg.sigma_gt, cfg.ln_clamp)
        for p, rep in zip(predicted, rep_targets)
        if rep is not None
    ]
    if not terms:
        return 0.0
    return math.fsum(terms) / len(predicted)


def _cross_group_pairs(partition: Sequence[int]) -> list[tuple[int, int]]:
    n = len(partition)
    return [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if partition[i] != partition[j]
    ]


def repbox_loss(
    predicted: Sequence[Box], partition: Sequence[int], cfg: LossConfig
) -> float:
    """Log penalty on pairwise IoU of predictions with different group ids.

    Each unordered cross-group pair contributes once; the sum is divided by
    the number of pairs that actually overlap, plus a small epsilon against
    division by zero.
    """
    _check_lengths(predicted, ("partition", partition))
    pairs = _cross_group_pairs(partition)
    if not pairs:
        return 0.0
    terms = []
    overlapping = 0
    for i, j in pairs:
        v = iou(predicted[i], predicted[j])
        if v > 0.0:
            overlapping += 1
        terms.append(smooth_ln(v, cfg.sigma_box, cfg.ln_clamp))
    return math.fsum(terms) / (overlapping + cfg.epsilon)


def total_loss(
    predicted: Sequence[Box],
    targets: Sequence[Box],
    rep_targets: Sequence[Box | None],
    partition: Sequence[int],
    cfg: LossConfig,
) -> LossBreakdown:
    """Combined loss: attraction + alpha * rep_gt + beta * rep_box."""
    attraction = attraction_loss(predicted, targets, cfg)
    rep_gt = repgt_loss(predicted, rep_targets, cfg)
    rep_box = repbox_loss(predicted, partition, cfg)
    total = attraction + cfg.alpha * rep_gt + cfg.beta * rep_box
    return LossBreakdown(attraction=attraction, rep_gt=rep_gt, rep_box=rep_box, total=total)


def total_loss_gradient(
    predicted: Sequence[Box],
    targets: Sequence[Box],
    rep_targets: Sequence[Box | None],
    partition: Sequence[int],
    cfg: LossConfig,
) -> LossGradients:
    """Gradient of the combined loss with respect to each predicted box.

    Box-repulsion pair gradients accumulate into both boxes of a pair. The
    overlapping-pair count in that term's denominator is piecewise constant
    and treated as a constant.
    """
    _check_lengths(
        predicted,
        ("targets", targets),
        ("rep_targets", rep_targets),
        ("partition", partition),
    )
    n = len(predicted)
    if n == 0:
        return LossGradients(per_box=())
    acc = [[0.0, 0.0, 0.0, 0.0] for _ in range(n)]
    flagged = [False] * n
    inv_n = 1.0 / n

    sigma = cfg.smooth_l1_sigma
    for i, (p, t) in enumerate(zip(predicted, targets)):
        residuals = (p.left - t.left, p.top - t.top, p.width - t.width, p.height - t.height)
        for k, r in enumerate(residuals):
            acc[i][k] += _smooth_l1_derivative(r, sigma) * inv_n

    if cfg.alpha > 0.0:
        for i, (p, rep) in enumerate(zip(predicted, rep_targets)):
            if rep is None:
                continue
            overlap = iog(p, rep)
            weight = cfg.alpha * inv_n * _smooth_ln_derivative(
                overlap, cfg.sigma_gt, cfg.ln_clamp
            )
            grad = iog_gradient(p, rep)
            flagged[i] = flagged[i] or grad.nondifferentiable
            for k, g in enumerate(grad.as_tuple()):
                acc[i][k] += weight * g

    if cfg.beta > 0.0:
        pairs = _cross_group_pairs(partition)
        if pairs:
            values = [iou(predicted[i], predicted[j]) for i, j in pairs]
            denom = sum(1 for v in values if v > 0.0) + cfg.epsilon
            for (i, j), v in zip(pairs, values):
                weight = cfg.beta * _smooth_ln_derivative(v, cfg.sigma_box, cfg.ln_clamp) / denom
                for idx, other in ((i, j), (j, i)):
                    grad = iou_gradient(predicted[idx], predicted[other])
                    flagged[idx] = flagged[idx] or grad.nondifferentiable
                    for k, g in enumerate(grad.as_tuple()):
                        acc[idx][k] += weight * g

    per_box = tuple(
        BoxGradient(*components, nondifferentiable=flag)
        for components, flag in zip(acc, flagged)
    )
    return LossGradients(per_box=per_box)
