import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from _oracles import check_op_gradient, conv3d_direct
from tristereo.aggregate import (ConvLayer, ConvStackParams, conv_stack, probability_volume,
                                 soft_argmin, soft_argmin_forward, upsample_disparity, upsample_forward)
from tristereo.costvol import CostVolume
from tristereo.geometry import DisparityMap


def _scores(vals):
    return CostVolume(np.asarray(vals, np.float32), "fused")


def test_identity_layer_passes_input_through():
    w = np.zeros((2, 2, 3, 3, 3))
    w[0, 0, 1, 1, 1] = w[1, 1, 1, 1, 1] = 1
    x = np.random.default_rng(0).normal(size=(2, 4, 3, 5)).astype(np.float32)
    out = conv_stack(CostVolume(x, "LR"), ConvStackParams([ConvLayer.from_weight(w, norm=False, act=False)]))
    assert np.array_equal(out.data, x)


def test_zero_kernel_emits_bias():
    layer = ConvLayer.from_weight(np.zeros((1, 3, 3, 3, 3)), bias=[0.7], norm=False, act=False)
    x = np.random.default_rng(1).normal(size=(3, 4, 3, 3)).astype(np.float32)
    assert np.allclose(conv_stack(CostVolume(x, "LR"), ConvStackParams([layer])).data, 0.7)


def test_two_layer_stack_matches_direct_summation():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 3, 3, 3)).astype(np.float32)
    w1, b1 = rng.normal(size=(2, 1, 3, 3, 3)), rng.normal(size=2)
    w2, b2 = rng.normal(size=(1, 2, 3, 3, 3)), rng.normal(size=1)
    stack = ConvStackParams([ConvLayer.from_weight(w1, b1, norm=False, act=True),
                             ConvLayer.from_weight(w2, b2, norm=False, act=False)])
    h = conv3d_direct(x.astype(float), w1.astype(np.float32).astype(float), b1.astype(np.float32))
    h = np.where(h > 0, h, 0.01 * h)
    ref = conv3d_direct(h, w2.astype(np.float32).astype(float), b2.astype(np.float32))
    out = conv_stack(CostVolume(x, "LR"), stack).data
    assert np.max(np.abs(out - ref)) < 1e-5


def test_group_mismatch_rejected():
    stack = ConvStackParams.init([4, 2, 1], np.random.default_rng(0))
    with pytest.raises(ValueError):
        conv_stack(CostVolume(np.zeros((3, 2, 2, 2), np.float32), "LR"), stack)


def test_soft_argmin_one_hot():
    s = np.zeros((1, 12, 2, 3))
    s[0, 7] = 30
    assert np.allclose(soft_argmin(_scores(s)).values, 7, atol=1e-3)


def test_soft_argmin_uniform():
    d = soft_argmin(_scores(np.zeros((1, 12, 2, 2))))
    assert np.allclose(d.values, 5.5) and d.valid.all()


def test_soft_argmin_hand_softmax():
    e = np.exp([2.0, 0.0, 0.0])
    p = e / e.sum()
    d = soft_argmin(_scores(np.array([2.0, 0.0, 0.0])[None, :, None, None]))
    assert d.values[0, 0] == pytest.approx(0 * p[0] + 1 * p[1] + 2 * p[2], abs=1e-6)


def test_non_finite_scores_rejected():
    s = np.zeros((1, 3, 1, 1), np.float32)
    s[0, 1] = np.inf
    with pytest.raises(ValueError):
        soft_argmin(_scores(s))


score_arrays = arrays(np.float64, (1, 6, 2, 3), elements=st.floats(-20, 20))


@given(score_arrays, st.floats(-50, 50))
def test_softmax_shift_invariance(s, c):
    a = soft_argmin_forward(s[0][None]).value
    b = soft_argmin_forward((s[0] + c)[None]).value
    assert np.allclose(a, b, atol=1e-5)


@given(score_arrays)
def test_probabilities_and_range(s):
    p = probability_volume(_scores(s))
    assert np.all(p >= 0) and np.allclose(p.sum(axis=0), 1, atol=1e-5)
    d = soft_argmin_forward(s[0][None]).value
    assert np.all(d >= -1e-9) and np.all(d <= 5 + 1e-9)


@given(arrays(np.float64, (6,), elements=st.floats(-5, 5)), st.integers(0, 5), st.floats(0.1, 3))
def test_raising_one_score_moves_toward_it(s, k, bump):
    before = soft_argmin_forward(s[None, :, None, None]).value.item()
    p0 = probability_volume(_scores(s[None, :, None, None]))[k, 0, 0]
    s2 = s.copy()
    s2[k] += bump
    after = soft_argmin_forward(s2[None, :, None, None]).value.item()
    p1 = probability_volume(_scores(s2[None, :, None, None]))[k, 0, 0]
    assert p1 > p0 or p0 > 1 - 1e-12
    assert abs(after - k) <= abs(before - k) + 1e-12


def test_soft_argmin_gradient():
    s = np.random.default_rng(4).normal(size=(2, 5, 3, 4))
    assert check_op_gradient(soft_argmin_forward, s) < 1e-4


def test_upsample_constant():
    d = upsample_disparity(DisparityMap(np.full((3, 5), 1.25, np.float32), np.ones((3, 5), bool)))
    assert d.shape == (12, 20) and np.allclose(d.values, 5.0) and d.valid.all()


def test_upsample_bilinear_midpoints():
    q = np.array([[0.0, 1.0], [2.0, 3.0]], np.float32)
    d = upsample_disparity(DisparityMap(q, np.ones((2, 2), bool))).values
    # sample centres map to (i + 0.5) / 4 - 0.5 in the quarter grid; edges clamp
    assert d[0, 0] == pytest.approx(0.0)
    assert d[0, 7] == pytest.approx(4.0)
    assert d[7, 0] == pytest.approx(8.0)
    # row 1, column 4 -> source (-0.125 -> 0, 0.625)
    assert d[1, 4] == pytest.approx(4 * 0.625)
    # row 4, column 4 -> source (0.625, 0.625)
    assert d[4, 4] == pytest.approx(4 * (0.625 * 2 + 0.625 * 1))


def test_upsample_mask_propagation():
    valid = np.ones((2, 3), bool)
    valid[0, 2] = False
    d = upsample_disparity(DisparityMap(np.ones((2, 3), np.float32), valid))
    assert not d.valid[:4, 8:].any()
    assert d.valid[:, :6].all() and d.valid[6:, 9:].all()
    assert not d.valid[4, 8]


def test_upsample_gradient():
    q = np.random.default_rng(5).normal(size=(2, 3, 4))
    assert check_op_gradient(lambda v: upsample_forward(v, (12, 16)), q) < 1e-4
