import json

import pytest

from crowdbox.dataio import (
    DataFormatError,
    dumps_annotations,
    dumps_detections,
    join_detections,
    load_annotations,
    load_detections,
    render_scene_svg,
    write_csv,
    write_curve_csv,
)
from crowdbox.evaluation import Annotation
from crowdbox.geometry import Box


MINIMAL_ANNOTATIONS = [
    {
        "image_id": "im1",
        "annotations": [
            {
                "id": "a",
                "box": [0.0, 0.0, 2.0, 2.0],
                "visible_box": [0.0, 0.0, 1.0, 2.0],
                "ignore": False,
                "in_eval": True,
            }
        ],
    }
]

MINIMAL_DETECTIONS = [
    {"image_id": "im1", "detections": [{"box": [0.0, 0.0, 2.0, 2.0], "score": 0.9}]}
]


def write_json(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


class TestLoadAnnotations:
    def test_minimal_valid(self, tmp_path):
        dataset = load_annotations(write_json(tmp_path, "a.json", MINIMAL_ANNOTATIONS))
        assert len(dataset.images) == 1
        assert dataset.images[0].annotations[0].id == "a"
        assert dataset.warnings == ()

    def test_optional_fields_defaulted(self, tmp_path):
        payload = [{"image_id": "im1", "annotations": [{"id": "a", "box": [0, 0, 1, 1]}]}]
        dataset = load_annotations(write_json(tmp_path, "a.json", payload))
        a = dataset.images[0].annotations[0]
        assert a.visible_box is None and a.ignore is False and a.in_eval is True

    def test_oversized_visible_box_clamped_with_warning(self, tmp_path):
        payload = [
            {
                "image_id": "im1",
                "annotations": [
                    {"id": "a", "box": [0, 0, 2, 2], "visible_box": [-1, 0, 4, 2]}
                ],
            }
        ]
        dataset = load_annotations(write_json(tmp_path, "a.json", payload))
        assert len(dataset.warnings) == 1
        clamped = dataset.images[0].annotations[0].visible_box
        assert clamped == Box(0, 0, 2, 2)

    def test_negative_width_rejected_with_field(self, tmp_path):
        payload = [
            {"image_id": "im1", "annotations": [{"id": "a", "box": [0, 0, -1, 2]}]}
        ]
        with pytest.raises(DataFormatError, match="im1.*box"):
            load_annotations(write_json(tmp_path, "a.json", payload))

    def test_duplicate_image_id_rejected(self, tmp_path):
        payload = [
            {"image_id": "im1", "annotations": []},
            {"image_id": "im1", "annotations": []},
        ]
        with pytest.raises(DataFormatError, match="duplicate image_id"):
            load_annotations(write_json(tmp_path, "a.json", payload))

    def test_unknown_field_rejected(self, tmp_path):
        payload = [
            {"image_id": "im1", "annotations": [{"id": "a", "box": [0, 0, 1, 1], "height": 3}]}
        ]
        with pytest.raises(DataFormatError, match="unknown annotation fields"):
            load_annotations(write_json(tmp_path, "a.json", payload))

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(DataFormatError, match="invalid JSON"):
            load_annotations(path)

    def test_round_trip_is_byte_identical(self, tmp_path):
        path = write_json(tmp_path, "a.json", MINIMAL_ANNOTATIONS)
        first = dumps_annotations(load_annotations(path))
        canonical = tmp_path / "canon.json"
        canonical.write_text(first, encoding="utf-8")
        second = dumps_annotations(load_annotations(canonical))
        assert first == second


class TestLoadDetections:
    def test_minimal_valid(self, tmp_path):
        detset = load_detections(write_json(tmp_path, "d.json", MINIMAL_DETECTIONS))
        assert len(detset.images) == 1
        assert detset.images[0].detections[0].score == 0.9

    def test_out_of_range_score_rejected(self, tmp_path):
        payload = [{"image_id": "im1", "detections": [{"box": [0, 0, 1, 1], "score": 1.5}]}]
        with pytest.raises(DataFormatError, match="score"):
            load_detections(write_json(tmp_path, "d.json", payload))

    def test_unknown_image_id_flagged_on_join(self, tmp_path):
        dataset = load_annotations(write_json(tmp_path, "a.json", MINIMAL_ANNOTATIONS))
        payload = [{"image_id": "other", "detections": []}]
        detset = load_detections(write_json(tmp_path, "d.json", payload))
        with pytest.raises(DataFormatError, match="unknown image ids"):
            join_detections(dataset, detset)

    def test_join_fills_missing_images_with_empty(self, tmp_path):
        payload = MINIMAL_ANNOTATIONS + [{"image_id": "im2", "annotations": []}]
        dataset = load_annotations(write_json(tmp_path, "a.json", payload))
        detset = load_detections(write_json(tmp_path, "d.json", MINIMAL_DETECTIONS))
        joined = join_detections(dataset, detset)
        assert set(joined) == {"im1", "im2"}
        assert joined["im2"] == ()

    def test_round_trip_is_byte_identical(self, tmp_path):
        path = write_json(tmp_path, "d.json", MINIMAL_DETECTIONS)
        first = dumps_detections(load_detections(path))
        canonical = tmp_path / "canon.json"
        canonical.write_text(first, encoding="utf-8")
        second = dumps_detections(load_detections(canonical))
        assert first == second


class TestCsv:
    def test_empty_points_header_only(self, tmp_path):
        path = tmp_path / "c.csv"
        write_curve_csv([], path)
        assert path.read_text(encoding="utf-8") == "fppi,miss_rate\n"

    def test_two_points_three_lines(self, tmp_path):
        path = tmp_path / "c.csv"
        write_curve_csv([(0.1, 0.5), (0.2, 0.25)], path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 3

    def test_parse_back_identical(self, tmp_path):
        points = [(0.014285714285714285, 1 / 3), (0.97, 2 / 7)]
        path = tmp_path / "c.csv"
        write_curve_csv(points, path)
        lines = path.read_text(encoding="utf-8").splitlines()[1:]
        parsed = [tuple(float(v) for v in line.split(",")) for line in lines]
        assert parsed == points

    def test_mixed_types(self, tmp_path):
        path = tmp_path / "m.csv"
        write_csv(path, ("step", "value"), [(0, 0.5), (1, 0.25)])
        assert path.read_text(encoding="utf-8").splitlines()[1] == "0,0.5"


class TestSvg:
    def test_render_layers_in_order(self, tmp_path):
        scene = [
            Annotation(id="g0", box=Box(0, 0, 2, 2), visible_box=Box(0, 0, 1, 2)),
            Annotation(id="g1", box=Box(1, 0, 2, 2)),
        ]
        initial = [Box(0.2, 0.1, 2, 2)]
        final = [Box(0.05, 0.02, 2, 2)]
        path = tmp_path / "scene.svg"
        render_scene_svg(scene, initial, final, path, extent=(8.0, 8.0))
        text = path.read_text(encoding="utf-8")
        assert text.count("<rect") == len(scene) + 1 + len(initial) + len(final)
        gt_pos = text.index("#c8c8c8")
        initial_pos = text.index("#1f77b4")
        final_pos = text.index("#d62728")
        assert gt_pos < initial_pos < final_pos

    def test_deterministic_output(self, tmp_path):
        scene = [Annotation(id="g0", box=Box(0, 0, 2, 2))]
        p1, p2 = tmp_path / "a.svg", tmp_path / "b.svg"
        render_scene_svg(scene, [], [], p1)
        render_scene_svg(scene, [], [], p2)
        assert p1.read_bytes() == p2.read_bytes()
