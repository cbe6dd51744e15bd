import json
import warnings

import numpy as np
import pytest

from dpyr.filter_conv import Filter
from dpyr.model import (Component, DpmModel, FeatureSpec, ModelFormatError, ModelValidationError, Part,
                        RawDeformation, load_model, model_to_dict, save_model, validate)
from dpyr.oracle import RngSpec, random_model

from conftest import make_model, part, root_only


def test_minimal_root_only_is_ok():
    assert validate(make_model([root_only(np.ones((1, 1, 1)))])) == []


def test_zero_quadratic_coefficient_reported():
    comp = Component(Filter(np.ones((2, 2, 1))), (part(np.ones((1, 1, 1)), (0, 0), ax=0.0),))
    problems = validate(make_model([comp]))
    assert [p.path for p in problems] == ["components[0].parts[0].deformation.x.a"]


def test_channel_mismatch_lists_both_counts():
    comp = Component(Filter(np.ones((2, 2, 3))), (part(np.ones((1, 1, 2)), (0, 0)),))
    problems = validate(make_model([comp], channels=3))
    assert len(problems) == 1
    assert "2" in problems[0].message and "3" in problems[0].message


def test_collects_every_violation():
    comp = Component(Filter(np.ones((2, 2, 2))),
                     (Part(Filter(np.ones((1, 1, 2))), (-1, 0), RawDeformation(-1, 0, 0, 0)),))
    model = DpmModel("x", FeatureSpec("hog31", 2, 8), (comp,))
    paths = {p.path for p in validate(model)}
    assert paths == {"feature.channels", "components[0].parts[0].anchor.dx",
                     "components[0].parts[0].deformation.x.a", "components[0].parts[0].deformation.y.a"}
    assert [p.path for p in validate(DpmModel("x", FeatureSpec("external", 1, 1), ()))] == ["components"]


def test_round_trip_is_bit_exact(tmp_path):
    model = random_model(RngSpec(3).generator())
    # awkward float32 values: subnormal, negative zero, extremes
    w = np.array([1e-45, -0.0, 3.4028235e38, 1 / 3, -7.1e-8, 0.1], dtype=np.float32).reshape(1, 2, 3)
    odd = Component(Filter(w), (), 0.1)
    model = DpmModel(model.class_name, FeatureSpec("external", 3, 1), (odd,))
    path = tmp_path / "m.json"
    save_model(model, path)
    back = load_model(path)
    assert back == model
    np.testing.assert_array_equal(back.components[0].root.weights.view(np.uint32), w.view(np.uint32))


def test_random_model_round_trip(tmp_path):
    for seed in range(5):
        model = random_model(RngSpec(seed).generator())
        save_model(model, tmp_path / "m.json")
        assert load_model(tmp_path / "m.json") == model


def test_save_refuses_invalid(tmp_path):
    comp = Component(Filter(np.ones((1, 1, 2))), (), 0.0)
    with pytest.raises(ModelValidationError):
        save_model(make_model([comp], channels=3), tmp_path / "m.json")


def test_missing_field_named(tmp_path):
    doc = model_to_dict(make_model([Component(Filter(np.ones((1, 1, 1))), (part(np.ones((1, 1, 1)), (0, 0)),))]))
    del doc["components"][0]["parts"][0]["deformation"]["ay"]
    path = tmp_path / "m.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match=r"components\[0\]\.parts\[0\]\.deformation\.ay"):
        load_model(path)


def test_truncated_file_reports_position(tmp_path):
    save_model(make_model([root_only(np.ones((2, 2, 1)))]), tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(ModelFormatError, match="line"):
        load_model(tmp_path / "t.json")


def test_wrong_weight_count(tmp_path):
    doc = model_to_dict(make_model([root_only(np.ones((2, 2, 1)))]))
    doc["components"][0]["root"]["weights"].pop()
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match=r"root\.weights"):
        load_model(tmp_path / "m.json")


def test_unknown_fields_warn_and_survive(tmp_path):
    doc = model_to_dict(make_model([root_only(np.ones((1, 1, 1)))]))
    doc["legacy_thresh"] = -0.5
    doc["components"][0]["mirror_of"] = 1
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.warns(UserWarning, match="legacy_thresh"):
        model = load_model(tmp_path / "m.json")
    assert model.extra == {"legacy_thresh": -0.5}
    save_model(model, tmp_path / "again.json")
    again = json.loads((tmp_path / "again.json").read_text())
    assert again["legacy_thresh"] == -0.5 and again["components"][0]["mirror_of"] == 1


def test_wrong_format_tag(tmp_path):
    doc = model_to_dict(make_model([root_only(np.ones((1, 1, 1)))]))
    doc["format"] = "something-else"
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ModelFormatError, match="format"):
        load_model(tmp_path / "m.json")


def test_validate_is_total_on_odd_numbers():
    comp = Component(Filter(np.ones((1, 1, 1))), (part(np.ones((1, 1, 1)), (0, 0), ax=float("nan")),), float("inf"))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        problems = validate(make_model([comp]))
    assert {"components[0].bias", "components[0].parts[0].deformation.x.a"} == {p.path for p in problems}
