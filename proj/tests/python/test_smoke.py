import math

import numpy as np
import pytest

import polygcn

SMALL = """
[backbone]
image_size = 64
channels_per_level = 8
stem_channels = 8
blocks_per_stage = 1
rpn_hidden = 8
proposal_top_k = 16
loc_hidden = 16

[poly]
roi_size = 10
gcn_steps = 2
blocks_per_step = 1
hidden = 8
boundary_hidden = 4

[scenes]
image_size = 64
max_buildings = 2
min_size = 16
max_size = 28
"""


def square(x0, y0, side):
    return np.array([[x0, y0], [x0 + side, y0], [x0 + side, y0 + side], [x0, y0 + side]])


def test_config_round_trip():
    text = polygcn.default_config()
    assert "[train]" in text
    assert polygcn.normalize_config(text) == text
    with pytest.raises(ValueError, match="learnig_rate"):
        polygcn.normalize_config("[train]\nlearnig_rate = 1\n")


def test_cyclic_loss_recovers_shift():
    rng = np.random.default_rng(0)
    angles = np.sort(rng.uniform(0, 2 * math.pi, 16))
    gt = np.stack([0.5 + 0.4 * np.cos(angles), 0.5 + 0.4 * np.sin(angles)], axis=1)
    pred = np.roll(gt, -5, axis=0)
    loss, shift = polygcn.cyclic_polygon_loss(pred, gt)
    assert loss == 0.0
    assert shift == 11
    # brute force over all shifts
    best = min(np.abs(np.roll(pred + 0.01, -k, axis=0) - gt).sum() for k in range(16))
    assert polygcn.cyclic_polygon_loss(pred + 0.01, gt)[0] == pytest.approx(best, abs=1e-12)


def test_iou_and_matching():
    assert abs(polygcn.polygon_iou(square(0, 0, 10), square(5, 0, 10)) - 1 / 3) <= 0.01
    r = polygcn.match_and_score(
        [square(0, 0, 10), square(20, 0, 10), square(1, 0, 10)],
        [0.9, 0.8, 0.7],
        [square(0, 0, 10), square(20, 0, 10)],
    )
    assert (r["tp"], r["fp"], r["fn"]) == (2, 1, 0)
    assert r["f1"] == pytest.approx(0.8, abs=1e-12)


def test_delta_round_trip():
    box, anchor = (30.0, 40.0, 12.0, 20.0), (32.0, 36.0, 16.0, 16.0)
    back = polygcn.decode_deltas(polygcn.encode_deltas(box, anchor), anchor)
    assert back == pytest.approx(box, abs=1e-12)


def test_scene_and_overlay():
    image, polys = polygcn.generate_scene(7, 0, SMALL)
    assert image.shape == (64, 64) and image.dtype == np.uint8
    assert 1 <= len(polys) <= 2
    assert all(p.shape == (16, 2) for p in polys)
    again, _ = polygcn.generate_scene(7, 0, SMALL)
    assert np.array_equal(image, again)

    assert np.array_equal(polygcn.render_overlay(image, []), np.repeat(image[..., None], 3, axis=2))
    out = polygcn.render_overlay(image, polys, polys)
    red = (out[..., 0] == 255) & (out[..., 1] == 0) & (out[..., 2] == 0)
    assert 1 <= red.sum() <= 16 * len(polys)


def test_detector_runs_untrained():
    det = polygcn.Detector(SMALL)
    assert det.parameter_count > 0
    image, _ = polygcn.generate_scene(7, 1, SMALL)
    for d in det.infer(image):
        assert 0.0 <= d["score"] <= 1.0
        assert d["polygon"].shape == (16, 2)
    with pytest.raises(RuntimeError):
        polygcn.Detector(SMALL, "/nonexistent/model.ckpt")
