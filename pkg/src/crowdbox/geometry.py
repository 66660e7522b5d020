"""Axis-aligned box geometry: areas, overlap ratios, and their gradients.

Boxes are stored as (left, top, width, height) in continuous scene units.
Two overlap ratios are provided: the symmetric intersection-over-union and
the asymmetric intersection-over-target-area, whose denominator does not
depend on the first box. Both come with closed-form partial derivatives
with respect to the first box's coordinates, which the loss layer chains
through.

At configurations where an overlap ratio is not differentiable (exactly
coincident or exactly touching edges) the gradient uses a symmetric
subgradient: tied min/max branches get half weight, and zero-width overlaps
contribute nothing. The returned gradient carries a ``nondifferentiable``
marker so callers can exclude such configurations from finite-difference
comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "Box",
    "BoxGradient",
    "area",
    "intersection_area",
    "iou",
    "iog",
    "iou_gradient",
    "iog_gradient",
]


@dataclass(frozen=True, slots=True)
class Box:
    """Axis-aligned rectangle with nonnegative extent."""

    left: float
    top: float
    width: float
    height: float

    def __post_init__(self) -> None:
        for value in (self.left, self.top, self.width, self.height):
            if not math.isfinite(value):
                raise ValueError(f"box coordinates must be finite, got {value!r}")
        if self.width < 0 or self.height < 0:
            raise ValueError(
                f"box extent must be nonnegative, got width={self.width}, height={self.height}"
            )

    @property
    def right(self) -> float:
        return self.left + self.width

    @property
    def bottom(self) -> float:
        return self.top + self.height

    def translated(self, dx: float, dy: float) -> "Box":
        return Box(self.left + dx, self.top + dy, self.width, self.height)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.width, self.height)


@dataclass(frozen=True, slots=True)
class BoxGradient:
    """Partial derivatives of a scalar with respect to one box's coordinates."""

    d_left: float
    d_top: float
    d_width: float
    d_height: float
    nondifferentiable: bool = False

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.d_left, self.d_top, self.d_width, self.d_height)


def area(b: Box) -> float:
    return b.width * b.height


def _overlap_1d(
    a_lo: float, a_len: float, b_lo: float, b_len: float
) -> tuple[float, float, float, bool]:
    """Overlap span of two intervals plus d(span)/d(a_lo), d(span)/d(a_hi).

    The span uses whichever interval's endpoints bound the overlap, so a
    fully contained interval contributes its exact length (this keeps
    identities like iou(b, b) == 1 free of rounding error). Zero-width
    touching and exact endpoint ties are kinks; ties get half weight on
    each branch.
    """
    a_hi = a_lo + a_len
    b_hi = b_lo + b_len
    if a_hi < b_hi:
        d_hi, hi_from_a, tie_hi = 1.0, True, False
    elif a_hi > b_hi:
        d_hi, hi_from_a, tie_hi = 0.0, False, False
    else:
        d_hi, hi_from_a, tie_hi = 0.5, True, True
    if a_lo > b_lo:
        d_lo, lo_from_a, tie_lo = -1.0, True, False
    elif a_lo < b_lo:
        d_lo, lo_from_a, tie_lo = 0.0, False, False
    else:
        d_lo, lo_from_a, tie_lo = -0.5, True, True
    if lo_from_a and hi_from_a:
        span = a_len
    elif lo_from_a:
        span = b_hi - a_lo
    elif hi_from_a:
        span = a_hi - b_lo
    else:
        span = b_len
    if span < 0.0:
        return span, 0.0, 0.0, False
    if span == 0.0:
        return 0.0, 0.0, 0.0, True
    return span, d_lo, d_hi, tie_lo or tie_hi


def intersection_area(a: Box, b: Box) -> float:
    sx = _overlap_1d(a.left, a.width, b.left, b.width)[0]
    if sx <= 0.0:
        return 0.0
    sy = _overlap_1d(a.top, a.height, b.top, b.height)[0]
    if sy <= 0.0:
        return 0.0
    return sx * sy


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 when both boxes are degenerate."""
    inter = intersection_area(a, b)
    area_a = area(a)
    area_b = area(b)
    # Containment gives inter equal to one area exactly; keep the union
    # exact there too so the ratio hits 1 without rounding residue.
    if inter == area_a:
        union = area_b
    elif inter == area_b:
        union = area_a
    else:
        union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return min(inter / union, 1.0)


def iog(b: Box, g: Box) -> float:
    """Intersection area of ``b`` and ``g`` divided by the area of ``g``."""
    denom = area(g)
    if denom <= 0.0:
        raise ValueError("iog target box must have positive area")
    return min(intersection_area(b, g) / denom, 1.0)


def _intersection_gradient(
    a: Box, b: Box
) -> tuple[float, float, float, float, float, bool]:
    """Intersection area and its partials w.r.t. a's (left, top, width, height)."""
    sx, dx_lo, dx_hi, kx = _overlap_1d(a.left, a.width, b.left, b.width)
    sy, dy_lo, dy_hi, ky = _overlap_1d(a.top, a.height, b.top, b.height)
    if sx <= 0.0 or sy <= 0.0:
        # Disjoint: locally constant zero. Exactly touching sits on the
        # boundary of the positive-overlap regime and gets flagged.
        flagged = (sx == 0.0 and sy >= 0.0) or (sy == 0.0 and sx >= 0.0)
        return 0.0, 0.0, 0.0, 0.0, 0.0, flagged
    # a.right = a.left + a.width, so d/d(left) collects both interval ends.
    d_left = (dx_lo + dx_hi) * sy
    d_width = dx_hi * sy
    d_top = (dy_lo + dy_hi) * sx
    d_height = dy_hi * sx
    return sx * sy, d_left, d_top, d_width, d_height, kx or ky


def iou_gradient(a: Box, b: Box) -> BoxGradient:
    """Gradient of ``iou(a, b)`` with respect to ``a``'s coordinates."""
    inter, dl, dt, dw, dh, flagged = _intersection_gradient(a, b)
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return BoxGradient(0.0, 0.0, 0.0, 0.0, nondifferentiable=True)
    scale = 1.0 / (union * union)
    components = []
    for d_inter, d_area in ((dl, 0.0), (dt, 0.0), (dw, a.height), (dh, a.width)):
        d_union = d_area - d_inter
        components.append((d_inter * union - inter * d_union) * scale)
    return BoxGradient(*components, nondifferentiable=flagged)


def iog_gradient(b: Box, g: Box) -> BoxGradient:
    """Gradient of ``iog(b, g)`` with respect to ``b``'s coordinates.

    The denominator is the target's area, constant in ``b``, so this is the
    intersection gradient rescaled.
    """
    denom = area(g)
    if denom <= 0.0:
        raise ValueError("iog target box must have positive area")
    _, dl, dt, dw, dh, flagged = _intersection_gradient(b, g)
    inv = 1.0 / denom
    return BoxGradient(dl * inv, dt * inv, dw * inv, dh * inv, nondifferentiable=flagged)
