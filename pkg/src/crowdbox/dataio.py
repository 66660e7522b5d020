"""File formats: annotation/detection JSON, curve CSV, scene SVG.

Loaders validate and reject structural problems instead of repairing them;
the single exception is a visible box sticking out of its full box, which
is clamped to the overlap with a warning record. Numbers are written in
shortest round-trip form so emitted files are byte-stable across runs.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .evaluation import Annotation
from .geometry import Box
from .nms import Detection

__all__ = [
    "DataFormatError",
    "Dataset",
    "ImageAnnotations",
    "DetectionSet",
    "ImageDetections",
    "load_annotations",
    "load_detections",
    "join_detections",
    "dumps_annotations",
    "dumps_detections",
    "write_detections",
    "write_csv",
    "write_curve_csv",
    "render_scene_svg",
    "load_json_config",
]


class DataFormatError(ValueError):
    """A file failed schema validation; the message names the offending field."""


@dataclass(frozen=True)
class ImageAnnotations:
    image_id: str
    annotations: tuple[Annotation, ...]


@dataclass(frozen=True)
class Dataset:
    images: tuple[ImageAnnotations, ...]
    warnings: tuple[str, ...] = field(default=())

    def by_image(self) -> dict[str, tuple[Annotation, ...]]:
        return {img.image_id: img.annotations for img in self.images}


@dataclass(frozen=True)
class ImageDetections:
    image_id: str
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class DetectionSet:
    images: tuple[ImageDetections, ...]

    def by_image(self) -> dict[str, tuple[Detection, ...]]:
        return {img.image_id: img.detections for img in self.images}


def _require(condition: bool, where: str, message: str) -> None:
    if not condition:
        raise DataFormatError(f"{where}: {message}")


def _parse_box(value, where: str) -> Box:
    _require(
        isinstance(value, (list, tuple)) and len(value) == 4,
        where,
        f"box must be a [left, top, width, height] array, got {value!r}",
    )
    coords = []
    for v in value:
        _require(
            isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v),
            where,
            f"box coordinates must be finite numbers, got {value!r}",
        )
        coords.append(float(v))
    _require(coords[2] >= 0 and coords[3] >= 0, where, f"box extent must be nonnegative, got {value!r}")
    return Box(*coords)


def _clamp_visible(visible: Box, full: Box) -> Box:
    left = min(max(visible.left, full.left), full.right)
    right = min(max(visible.right, full.left), full.right)
    top = min(max(visible.top, full.top), full.bottom)
    bottom = min(max(visible.bottom, full.top), full.bottom)
    return Box(left, top, right - left, bottom - top)


_ANNOTATION_KEYS = {"id", "box", "visible_box", "ignore", "in_eval"}


def load_annotations(path: str | Path) -> Dataset:
    """Read and validate an annotations file.

    One entry per image: ``{"image_id": str, "annotations": [{"id", "box",
    "visible_box" | null, "ignore", "in_eval"}]}``. Image ids must be
    unique. Visible boxes are clamped into their full boxes, with a warning
    record per clamp.
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    _require(isinstance(raw, list), str(path), "top level must be a list of image records")
    images: list[ImageAnnotations] = []
    warnings: list[str] = []
    seen: set[str] = set()
    for entry in raw:
        _require(isinstance(entry, dict), str(path), f"image record must be an object, got {entry!r}")
        unknown = set(entry) - {"image_id", "annotations"}
        _require(not unknown, str(path), f"unknown image record fields: {sorted(unknown)}")
        _require("image_id" in entry and "annotations" in entry, str(path), "image record needs image_id and annotations")
        image_id = entry["image_id"]
        _require(isinstance(image_id, str) and image_id, str(path), f"image_id must be a nonempty string, got {image_id!r}")
        _require(image_id not in seen, str(path), f"duplicate image_id {image_id!r}")
        seen.add(image_id)
        where = f"{path} image {image_id!r}"
        _require(isinstance(entry["annotations"], list), where, "annotations must be a list")
        anns: list[Annotation] = []
        for item in entry["annotations"]:
            _require(isinstance(item, dict), where, f"annotation must be an object, got {item!r}")
            unknown = set(item) - _ANNOTATION_KEYS
            _require(not unknown, where, f"unknown annotation fields: {sorted(unknown)}")
            _require("id" in item and "box" in item, where, "annotation needs id and box")
            ann_id = item["id"]
            _require(isinstance(ann_id, str) and ann_id, where, f"annotation id must be a nonempty string, got {ann_id!r}")
            ann_where = f"{where} annotation {ann_id!r}"
            try:
                box = _parse_box(item["box"], f"{ann_where} field box")
            except ValueError as exc:
                if isinstance(exc, DataFormatError):
                    raise
                raise DataFormatError(f"{ann_where} field box: {exc}") from exc
            visible = item.get("visible_box")
            visible_box = None
            if visible is not None:
                visible_box = _parse_box(visible, f"{ann_where} field visible_box")
                clamped = _clamp_visible(visible_box, box)
                if clamped.as_tuple() != visible_box.as_tuple():
                    warnings.append(
                        f"image {image_id!r} annotation {ann_id!r}: visible_box clamped into box"
                    )
                    visible_box = clamped
            ignore = item.get("ignore", False)
            in_eval = item.get("in_eval", True)
            _require(isinstance(ignore, bool), ann_where, "ignore must be a boolean")
            _require(isinstance(in_eval, bool), ann_where, "in_eval must be a boolean")
            anns.append(
                Annotation(id=ann_id, box=box, visible_box=visible_box, ignore=ignore, in_eval=in_eval)
            )
        images.append(ImageAnnotations(image_id=image_id, annotations=tuple(anns)))
    return Dataset(images=tuple(images), warnings=tuple(warnings))


def load_detections(path: str | Path) -> DetectionSet:
    """Read and validate a detections file.

    One entry per image: ``{"image_id": str, "detections": [{"box",
    "score"}]}`` with scores in [0, 1].
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    _require(isinstance(raw, list), str(path), "top level must be a list of image records")
    images: list[ImageDetections] = []
    seen: set[str] = set()
    for entry in raw:
        _require(isinstance(entry, dict), str(path), f"image record must be an object, got {entry!r}")
        unknown = set(entry) - {"image_id", "detections"}
        _require(not unknown, str(path), f"unknown image record fields: {sorted(unknown)}")
        _require("image_id" in entry and "detections" in entry, str(path), "image record needs image_id and detections")
        image_id = entry["image_id"]
        _require(isinstance(image_id, str) and image_id, str(path), f"image_id must be a nonempty string, got {image_id!r}")
        _require(image_id not in seen, str(path), f"duplicate image_id {image_id!r}")
        seen.add(image_id)
        where = f"{path} image {image_id!r}"
        _require(isinstance(entry["detections"], list), where, "detections must be a list")
        dets: list[Detection] = []
        for k, item in enumerate(entry["detections"]):
            _require(isinstance(item, dict), where, f"detection must be an object, got {item!r}")
            unknown = set(item) - {"box", "score"}
            _require(not unknown, where, f"unknown detection fields: {sorted(unknown)}")
            _require("box" in item and "score" in item, where, "detection needs box and score")
            det_where = f"{where} detection {k} field"
            box = _parse_box(item["box"], f"{det_where} box")
            score = item["score"]
            _require(
                isinstance(score, (int, float)) and not isinstance(score, bool) and math.isfinite(score),
                where,
                f"detection {k} field score: must be a finite number, got {score!r}",
            )
            _require(
                0.0 <= score <= 1.0,
                where,
                f"detection {k} field score: must be in [0, 1], got {score!r}",
            )
            dets.append(Detection(box=box, score=float(score)))
        images.append(ImageDetections(image_id=image_id, detections=tuple(dets)))
    return DetectionSet(images=tuple(images))


def join_detections(
    dataset: Dataset, detections: DetectionSet
) -> dict[str, tuple[Detection, ...]]:
    """Detections keyed by image id, covering every dataset image.

    Images without detections map to an empty tuple; detections for an
    unknown image id are an error.
    """
    known = {img.image_id for img in dataset.images}
    unknown = [img.image_id for img in detections.images if img.image_id not in known]
    if unknown:
        raise DataFormatError(
            f"detections reference unknown image ids: {sorted(unknown)}"
        )
    det_map = detections.by_image()
    return {img.image_id: det_map.get(img.image_id, ()) for img in dataset.images}


def _box_payload(box: Box) -> list[float]:
    return [box.left, box.top, box.width, box.height]


def dumps_annotations(dataset: Dataset) -> str:
    payload = [
        {
            "image_id": img.image_id,
            "annotations": [
                {
                    "id": a.id,
                    "box": _box_payload(a.box),
                    "visible_box": None if a.visible_box is None else _box_payload(a.visible_box),
                    "ignore": a.ignore,
                    "in_eval": a.in_eval,
                }
                for a in img.annotations
            ],
        }
        for img in dataset.images
    ]
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def dumps_detections(detections: DetectionSet) -> str:
    payload = [
        {
            "image_id": img.image_id,
            "detections": [
                {"box": _box_payload(d.box), "score": d.score} for d in img.detections
            ],
        }
        for img in detections.images
    ]
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def write_detections(detections: DetectionSet, path: str | Path) -> None:
    Path(path).write_text(dumps_detections(detections), encoding="utf-8")


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    """Plain comma-separated file with a header row and full-precision floats."""
    lines = [",".join(header)]
    lines.extend(",".join(_format_cell(v) for v in row) for row in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_curve_csv(points: Sequence[tuple[float, float]], path: str | Path) -> None:
    write_csv(path, ("fppi", "miss_rate"), points)


def render_scene_svg(
    scene: Sequence[Annotation],
    initial_boxes: Sequence[Box],
    final_boxes: Sequence[Box],
    path: str | Path,
    extent: tuple[float, float] | None = None,
) -> None:
    """Schematic render: ground truths (grey, visible part darker), then
    initial predictions (dashed blue), then final predictions (red)."""
    every = [a.box for a in scene] + list(initial_boxes) + list(final_boxes)
    if extent is not None:
        min_x, min_y = 0.0, 0.0
        max_x, max_y = extent
    elif every:
        min_x = min(b.left for b in every) - 0.5
        min_y = min(b.top for b in every) - 0.5
        max_x = max(b.right for b in every) + 0.5
        max_y = max(b.bottom for b in every) + 0.5
    else:
        min_x = min_y = 0.0
        max_x = max_y = 1.0
    width = max_x - min_x
    height = max_y - min_y
    stroke = 0.01 * max(width, height)

    def rect(box: Box, style: str) -> str:
        return (
            f'  <rect x="{box.left!r}" y="{box.top!r}" width="{box.width!r}" '
            f'height="{box.height!r}" {style}/>'
        )

    lines = [
        '<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="{min_x!r} {min_y!r} {width!r} {height!r}">'
    ]
    for a in scene:
        lines.append(rect(a.box, 'fill="#c8c8c8" fill-opacity="0.6" stroke="none"'))
        if a.visible_box is not None and a.visible_box.width > 0 and a.visible_box.height > 0:
            lines.append(rect(a.visible_box, 'fill="#969696" fill-opacity="0.6" stroke="none"'))
    for b in initial_boxes:
        lines.append(
            rect(
                b,
                f'fill="none" stroke="#1f77b4" stroke-width="{stroke!r}" '
                f'stroke-dasharray="{2 * stroke!r} {2 * stroke!r}"',
            )
        )
    for b in final_boxes:
        lines.append(rect(b, f'fill="none" stroke="#d62728" stroke-width="{stroke!r}"'))
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_json_config(path: str | Path, cls):
    """Load a config object through its ``from_dict`` with file context on errors."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        try:
            raw = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return cls.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
