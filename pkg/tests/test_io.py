"""Tensor dumps, detection files, and flat config parsing."""

import base64
import json

import numpy as np
import pytest

from dminer import (
    BBox,
    Detection,
    DumpFormatError,
    MalformedAnnotationsError,
    load_detections,
    load_tensor,
    parse_config_file,
    save_detections,
    save_tensor,
)
from dminer.io import coerce_config_value


class TestTensorDump:
    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(100)
        p = tmp_path / "t.json"
        for _ in range(10):
            arr = rng.standard_normal(
                (int(rng.integers(1, 6)), int(rng.integers(1, 6)), int(rng.integers(1, 4)))
            )
            save_tensor(p, arr)
            np.testing.assert_array_equal(load_tensor(p), arr)

    def test_header_fields(self, tmp_path):
        p = tmp_path / "t.json"
        save_tensor(p, np.zeros((2, 3, 4)))
        with open(p) as fh:
            header = json.load(fh)
        assert header["dims"] == [2, 3, 4]
        assert header["dtype"] == "f64"
        assert header["layout"] == "yxc"
        assert "data_b64" in header

    def test_sidecar_payload(self, tmp_path):
        arr = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
        (tmp_path / "t.bin").write_bytes(arr.astype("<f8").tobytes())
        with open(tmp_path / "t.json", "w") as fh:
            json.dump(
                {"dims": [2, 3, 4], "dtype": "f64", "layout": "yxc", "data_file": "t.bin"},
                fh,
            )
        np.testing.assert_array_equal(load_tensor(tmp_path / "t.json"), arr)

    def test_non_3d_array_rejected_on_save(self, tmp_path):
        with pytest.raises(ValueError):
            save_tensor(tmp_path / "t.json", np.zeros((3, 3)))

    def test_missing_payload_rejected(self, tmp_path):
        p = tmp_path / "t.json"
        with open(p, "w") as fh:
            json.dump({"dims": [1, 1, 1], "dtype": "f64", "layout": "yxc"}, fh)
        with pytest.raises(DumpFormatError):
            load_tensor(p)

    def test_wrong_dtype_rejected(self, tmp_path):
        p = tmp_path / "t.json"
        save_tensor(p, np.zeros((1, 1, 1)))
        with open(p) as fh:
            header = json.load(fh)
        header["dtype"] = "f32"
        with open(p, "w") as fh:
            json.dump(header, fh)
        with pytest.raises(DumpFormatError):
            load_tensor(p)

    def test_wrong_layout_rejected(self, tmp_path):
        p = tmp_path / "t.json"
        save_tensor(p, np.zeros((1, 1, 1)))
        with open(p) as fh:
            header = json.load(fh)
        header["layout"] = "cyx"
        with open(p, "w") as fh:
            json.dump(header, fh)
        with pytest.raises(DumpFormatError):
            load_tensor(p)

    def test_payload_length_must_match_dims(self, tmp_path):
        p = tmp_path / "t.json"
        payload = base64.b64encode(b"\x00" * 8).decode()
        with open(p, "w") as fh:
            json.dump(
                {"dims": [2, 1, 1], "dtype": "f64", "layout": "yxc", "data_b64": payload},
                fh,
            )
        with pytest.raises(DumpFormatError):
            load_tensor(p)

    def test_non_finite_payload_rejected(self, tmp_path):
        p = tmp_path / "t.json"
        arr = np.array([[[np.nan]]])
        payload = base64.b64encode(arr.astype("<f8").tobytes()).decode()
        with open(p, "w") as fh:
            json.dump(
                {"dims": [1, 1, 1], "dtype": "f64", "layout": "yxc", "data_b64": payload},
                fh,
            )
        with pytest.raises(DumpFormatError):
            load_tensor(p)

    def test_invalid_base64_rejected(self, tmp_path):
        p = tmp_path / "t.json"
        with open(p, "w") as fh:
            json.dump(
                {"dims": [1, 1, 1], "dtype": "f64", "layout": "yxc", "data_b64": "@@@"},
                fh,
            )
        with pytest.raises(DumpFormatError):
            load_tensor(p)

    def test_unreadable_json_rejected(self, tmp_path):
        p = tmp_path / "t.json"
        p.write_text("not json at all")
        with pytest.raises(DumpFormatError):
            load_tensor(p)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(DumpFormatError):
            load_tensor(tmp_path / "absent.json")


class TestDetectionFile:
    def test_round_trip(self, tmp_path):
        dets = [
            Detection(0, BBox(10.0, 12.0, 4.0, 6.0), 1, 0.75),
            Detection(3, BBox(50.5, 20.25, 8.0, 8.0), 0, 0.1),
        ]
        p = tmp_path / "dets.json"
        save_detections(p, dets)
        assert load_detections(p) == dets

    def test_field_names(self, tmp_path):
        p = tmp_path / "dets.json"
        save_detections(p, [Detection(7, BBox(1.0, 2.0, 3.0, 4.0), 2, 0.5)])
        with open(p) as fh:
            rows = json.load(fh)
        assert rows[0] == {
            "image_id": 7,
            "cx": 1.0,
            "cy": 2.0,
            "w": 3.0,
            "h": 4.0,
            "category_id": 2,
            "score": 0.5,
        }

    def test_xywh_conversion(self, tmp_path):
        p = tmp_path / "dets.json"
        with open(p, "w") as fh:
            json.dump(
                [{"image_id": 0, "x": 10.0, "y": 20.0, "w": 4.0, "h": 8.0,
                  "category_id": 0, "score": 0.5}],
                fh,
            )
        (d,) = load_detections(p, box_format="xywh")
        assert (d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h) == (12.0, 24.0, 4.0, 8.0)

    def test_missing_key_rejected(self, tmp_path):
        p = tmp_path / "dets.json"
        with open(p, "w") as fh:
            json.dump([{"image_id": 0, "cx": 1.0, "cy": 2.0, "w": 3.0, "h": 4.0}], fh)
        with pytest.raises(MalformedAnnotationsError):
            load_detections(p)

    def test_bad_score_rejected(self, tmp_path):
        p = tmp_path / "dets.json"
        with open(p, "w") as fh:
            json.dump(
                [{"image_id": 0, "cx": 1.0, "cy": 2.0, "w": 3.0, "h": 4.0,
                  "category_id": 0, "score": 2.0}],
                fh,
            )
        with pytest.raises(MalformedAnnotationsError):
            load_detections(p)

    def test_top_level_must_be_a_list(self, tmp_path):
        p = tmp_path / "dets.json"
        with open(p, "w") as fh:
            json.dump({"detections": []}, fh)
        with pytest.raises(MalformedAnnotationsError):
            load_detections(p)


class TestConfigFile:
    def test_basic_parsing(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "# run settings\n"
            "seed = 7\n"
            "lr=0.05   # inline comment\n"
            "\n"
            "name = 'demo run'\n"
        )
        cfg = parse_config_file(p)
        assert cfg == {"seed": "7", "lr": "0.05", "name": "demo run"}

    def test_line_without_equals_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("seed 7\n")
        with pytest.raises(ValueError) as ei:
            parse_config_file(p)
        assert ":1:" in str(ei.value)

    def test_empty_key_rejected(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("= 3\n")
        with pytest.raises(ValueError):
            parse_config_file(p)

    def test_last_assignment_wins(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("a = 1\na = 2\n")
        assert parse_config_file(p)["a"] == "2"

    def test_value_coercion(self):
        assert coerce_config_value("true") is True
        assert coerce_config_value("False") is False
        assert coerce_config_value("42") == 42
        assert isinstance(coerce_config_value("42"), int)
        assert coerce_config_value("0.5") == 0.5
        assert coerce_config_value("hello") == "hello"
