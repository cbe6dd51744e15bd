import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpyr import oracle
from dpyr.core import BBox, Detection, FeatureMap
from dpyr.detect import (NmsPolicy, PyramidMeta, cell_box, detections_document, dumps_document,
                         extract_detections, nms)
from dpyr.dpm_cnn import score_pyramid
from dpyr.features import FeaturePyramid
from dpyr.model import Component
from dpyr.filter_conv import Filter

from conftest import make_model, part, root_only


def test_box_formula_example():
    meta = PyramidMeta(16, (0, 0), (2.0,), (500, 500))
    box = cell_box(3, 2, 4, 6, 2.0, meta)
    assert box == (24, 16, 71, 47)
    # inverse map: corners back to cells
    assert box[0] * 2.0 / 16 == 3 and box[1] * 2.0 / 16 == 2
    assert (box[2] + 1) * 2.0 / 16 == 3 + 6 and (box[3] + 1) * 2.0 / 16 == 2 + 4


def _identity_setup(values):
    data = np.asarray(values, np.float32)[:, :, None]
    pyr = FeaturePyramid([FeatureMap(data)], [1.0], 1, (0, 0), image_size=data.shape[:2])
    model = make_model([root_only([[[1.0]]])])
    return pyr, model


def test_identity_mapping_one_detection_per_cell():
    pyr, model = _identity_setup([[0.5, -1.0], [2.0, 0.0]])
    dets = extract_detections(score_pyramid(pyr, model), PyramidMeta.of(pyr), model, -np.inf)
    assert [(d.box.as_list(), d.score) for d in dets] == [
        ([0, 1, 0, 1], 2.0), ([0, 0, 0, 0], 0.5), ([1, 1, 1, 1], 0.0), ([1, 0, 1, 0], -1.0)]


def test_infinite_threshold_is_empty():
    pyr, model = _identity_setup([[0.5]])
    assert extract_detections(score_pyramid(pyr, model), PyramidMeta.of(pyr), model, np.inf) == []


def test_threshold_is_inclusive():
    pyr, model = _identity_setup([[0.5, 0.25]])
    dets = extract_detections(score_pyramid(pyr, model), PyramidMeta.of(pyr), model, 0.5)
    assert [d.score for d in dets] == [0.5]


def test_padding_and_clipping():
    # padded cell 0 lies outside the image: box gets clipped, score kept
    data = np.zeros((3, 3, 1), np.float32)
    data[1, 1, 0] = 1.0
    pyr = FeaturePyramid([FeatureMap(data)], [1.0], 4, (1, 1), image_size=(4, 4))
    model = make_model([root_only(np.ones((2, 2, 1)))], stride=4)
    dets = extract_detections(score_pyramid(pyr, model), PyramidMeta.of(pyr), model, -np.inf)
    by_cell = {(d.box.x1, d.box.y1): d for d in dets}
    assert len(dets) == 4
    assert by_cell[0, 0].box == BBox(0, 0, 3, 3)  # raw (-4, -4, 3, 3)


def test_part_boxes_follow_traceback():
    data = np.zeros((6, 6, 1), np.float32)
    data[4, 4, 0] = 5.0
    comp = Component(Filter(np.zeros((2, 2, 1))), (part(np.ones((1, 1, 1)), (1, 1), ax=0.1, ay=0.1),), 0.0)
    model = make_model([comp], stride=8)
    pyr = FeaturePyramid([FeatureMap(data)], [2.0], 8, (0, 0), image_size=(24, 24))
    dets = extract_detections(score_pyramid(pyr, model), PyramidMeta.of(pyr), model, -np.inf)
    top = dets[0]
    assert len(top.part_boxes) == 1
    # the part lands on the bright cell (4, 4): 4 px per cell at scale 2
    assert top.part_boxes[0] == BBox(16, 16, 19, 19)
    assert top.score == pytest.approx(max(oracle.naive_score_map(pyr.levels[0], comp).ravel()))


def test_part_boxes_flagged_not_clipped():
    data = np.zeros((4, 4, 1), np.float32)
    comp = Component(Filter(np.zeros((1, 1, 1))), (part(np.ones((1, 1, 1)), (0, 0)),), 0.0)
    model = make_model([comp], stride=2)
    pyr = FeaturePyramid([FeatureMap(data)], [1.0], 2, (1, 1), image_size=(4, 4))
    dets = extract_detections(score_pyramid(pyr, model), PyramidMeta.of(pyr), model, -np.inf)
    corner = [d for d in dets if d.part_boxes[0].x1 < 0]
    assert corner and all(0 in d.parts_out_of_bounds for d in corner)


def test_nms_single_and_duplicates():
    a = Detection(BBox(0, 0, 9, 9), 0.9, 0, 0)
    assert nms([a], NmsPolicy()) == [a]
    b = Detection(BBox(0, 0, 9, 9), 0.8, 0, 0)
    assert nms([b, a], NmsPolicy("iou", 0.3)) == [a]


def test_nms_worked_example():
    A = Detection(BBox(0, 0, 9, 9), 3, 0, 0)
    B = Detection(BBox(5, 0, 14, 9), 2, 0, 0)
    C = Detection(BBox(20, 20, 29, 29), 1, 0, 0)
    assert nms([C, B, A], NmsPolicy("iou", 0.3)) == [A, C]


def test_legacy_overlap_is_candidate_coverage():
    big = Detection(BBox(0, 0, 19, 19), 2, 0, 0)
    small = Detection(BBox(2, 2, 5, 5), 1, 0, 0)
    # iou is tiny, but the small box is fully covered
    assert nms([big, small], NmsPolicy("iou", 0.3)) == [big, small]
    assert nms([big, small], NmsPolicy("legacy-dpm", 0.3)) == [big]


def test_nms_cap():
    dets = [Detection(BBox(10 * i, 0, 10 * i + 5, 5), float(i), 0, 0) for i in range(5)]
    assert [d.score for d in nms(dets, NmsPolicy(max_detections=2))] == [4.0, 3.0]


def test_nms_policy_validation():
    for kw in ({"threshold": 0.0}, {"threshold": 1.0}, {"kind": "soft"}):
        with pytest.raises(ValueError):
            NmsPolicy(**kw)


det_lists = st.lists(st.builds(
    lambda x, y, w, h, s: Detection(BBox(x, y, x + w - 1, y + h - 1), s, 0, 0),
    st.integers(0, 50), st.integers(0, 50), st.integers(1, 25), st.integers(1, 25),
    st.floats(-3, 3, allow_nan=False)), max_size=30)


@settings(max_examples=150)
@given(det_lists, st.sampled_from(["iou", "legacy-dpm"]), st.floats(0.01, 0.99))
def test_nms_invariants(dets, kind, thr):
    policy = NmsPolicy(kind, thr)
    kept = nms(dets, policy)
    assert all(a.score >= b.score for a, b in zip(kept, kept[1:]))
    assert all(k in dets for k in kept)
    for i, a in enumerate(kept):
        for b in kept[i + 1:]:
            assert policy.overlap(a.box, b.box) <= thr
    assert nms(kept, policy) == kept


def test_document_shape():
    pyr, model = _identity_setup([[0.5]])
    dets = extract_detections(score_pyramid(pyr, model), PyramidMeta.of(pyr), model, -np.inf)
    doc = json.loads(dumps_document(detections_document(dets, model, NmsPolicy(), -np.inf)))
    assert doc["class"] == "toy"
    assert doc["nms"] == {"kind": "iou", "threshold": 0.3, "max_detections": None}
    assert doc["score_threshold"] == "-inf"
    assert doc["detections"] == [{"box": [0, 0, 0, 0], "score": 0.5, "component": 0, "level": 0, "parts": []}]
