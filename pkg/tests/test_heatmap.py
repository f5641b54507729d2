import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from walkerpose.errors import EmptyMap
from walkerpose.heatmap import (HeatmapStack, decode_keypoints, dump_stack, encode, encode_connection_maps,
                                encode_keypoint_maps, hard_argmax, heatmap_mse, integral_loss, load_stack,
                                soft_argmax)

EXP_HALF = 0.6065306597126334  # exp(-1/2)


def test_keypoint_peak_and_one_sigma():
    m = encode_keypoint_maps([[40, 50]], 3.0, 64, 112)[0]
    assert m[50, 40] == 1.0
    assert m[50, 43] == pytest.approx(EXP_HALF, abs=1e-12)
    assert m[53, 40] == pytest.approx(EXP_HALF, abs=1e-12)


def test_keypoint_truncated_beyond_four_sigma():
    m = encode_keypoint_maps([[30, 50]], 3.0, 64, 112)[0]
    assert m[50, 30 + 12] > 0
    assert m[50, 30 + 13] == 0.0


def test_off_frame_keypoint_gives_zero_map():
    m = encode_keypoint_maps([[-10, -10]], 3.0, 64, 112)[0]
    assert not m.any()


def test_zero_confidence_gives_zero_map():
    m = encode_keypoint_maps([[10, 10], [20, 20]], 3.0, 64, 112, confidence=[1.0, 0.0])
    assert m[0].any() and not m[1].any()


def _coords(topo, rng, w=64, h=112):
    return rng.uniform([10, 10], [w - 10, h - 10], size=(17, 2))


def test_connection_on_segment_and_at_sigma(topo):
    coords = np.full((17, 2), 5.0)
    a, b = topo.connections[0]
    coords[a] = (10.0, 20.0)
    coords[b] = (40.0, 20.0)
    maps = encode_connection_maps(coords, topo, 3.0, 64, 112)
    assert maps[0, 20, 25] == pytest.approx(1.0)
    assert maps[0, 23, 25] == pytest.approx(EXP_HALF, abs=1e-12)
    # beyond the end point the distance is measured to the end point
    assert maps[0, 20, 43] == pytest.approx(EXP_HALF, abs=1e-12)


def test_zero_length_connection_matches_keypoint_map(topo):
    coords = np.full((17, 2), 30.0)
    kp = encode_keypoint_maps(coords, 3.0, 64, 112)
    conn = encode_connection_maps(coords, topo, 3.0, 64, 112)
    a, _ = topo.connections[0]
    assert np.allclose(conn[0], kp[a], atol=1e-15)


def test_connection_zero_when_endpoint_off_frame(topo):
    coords = np.full((17, 2), 30.0)
    a, b = topo.connections[3]
    coords[b] = (-5.0, 30.0)
    assert not encode_connection_maps(coords, topo, 3.0, 64, 112)[3].any()


def test_soft_argmax_one_hot():
    m = np.zeros((112, 64))
    m[20, 10] = 1.0
    assert soft_argmax(m) == (10.0, 20.0, 1.0)


def test_soft_argmax_two_peaks():
    m = np.zeros((112, 64))
    m[20, 10] = m[20, 30] = 1.0
    u, v, _ = soft_argmax(m)
    assert (u, v) == (20.0, 20.0)


def test_soft_argmax_gaussian_oracle():
    # brute-force expectation over all pixels, evaluated independently
    m = encode_keypoint_maps([[40.3, 50.7]], 3.0, 64, 112)[0]
    u, v, _ = soft_argmax(m)
    assert u == pytest.approx(40.300049787738594, abs=1e-9)
    assert v == pytest.approx(50.69995021226133, abs=1e-9)


def test_soft_argmax_empty():
    with pytest.raises(EmptyMap):
        soft_argmax(np.zeros((5, 5)))
    with pytest.raises(EmptyMap):
        soft_argmax(-np.ones((5, 5)))


def test_hard_argmax():
    m = np.zeros((112, 64))
    m[20, 10] = 1.0
    assert hard_argmax(m) == (10, 20)
    t = np.zeros((10, 10))
    t[0, 0] = t[5, 5] = 1.0
    assert hard_argmax(t) == (0, 0)


@settings(max_examples=100, deadline=None)
@given(u=st.floats(9.0, 54.0), v=st.floats(9.0, 102.0))
def test_encode_decode_closure_property(u, v):
    m = encode_keypoint_maps([[u, v]], 3.0, 64, 112)[0]
    su, sv, _ = soft_argmax(m)
    hu, hv = hard_argmax(m)
    assert abs(su - u) < 0.05 and abs(sv - v) < 0.05
    assert abs(su - hu) <= 0.5 + 1e-9 and abs(sv - hv) <= 0.5 + 1e-9


def test_decode_keypoints_scale_and_missing(topo, rng):
    coords = _coords(topo, rng)
    conf = np.ones(17)
    conf[4] = 0
    stack = encode(coords, topo, confidence=conf)
    out, c = decode_keypoints(stack, scale=(10.0, 10.0))
    assert np.isnan(out[4]).all() and c[4] == 0
    keep = np.arange(17) != 4
    assert np.allclose(out[keep], coords[keep] * 10, atol=0.5)


def test_integral_loss_hand_mean():
    gt = np.zeros((17, 2))
    pred = gt.copy()
    pred[3, 0] = 3.4
    assert integral_loss(gt, gt) == 0.0
    assert integral_loss(pred, gt) == pytest.approx(0.1)


def test_heatmap_mse_oracle(topo):
    coords = np.full((17, 2), -50.0)
    coords[0] = (20.0, 30.0)
    gt = encode(coords, topo)
    zero = HeatmapStack(np.zeros_like(gt.keypoint_maps), np.zeros_like(gt.connection_maps))
    assert heatmap_mse(gt, gt) == 0.0
    # independent brute-force sum over the 33 maps
    assert heatmap_mse(gt, zero) == pytest.approx(0.00011953095107745406, rel=1e-12)


def test_dump_load_round_trip(tmp_path, topo, rng):
    stack = encode(_coords(topo, rng), topo)
    dump_stack(stack, tmp_path / "h.bin")
    raw = (tmp_path / "h.bin").read_bytes()
    assert raw[:4] == b"WPHM"
    back = load_stack(tmp_path / "h.bin")
    assert back.keypoint_maps.shape == (17, 112, 64)
    assert back.connection_maps.shape == (16, 112, 64)
    assert np.allclose(back.all_maps(), stack.all_maps(), atol=1e-7)


def test_load_stack_rejects_garbage(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(ValueError):
        load_stack(tmp_path / "x.bin")
