import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lambdaunet import tensor_core as tc
from lambdaunet.errors import DimensionError


def loop_conv(values, kernel, pads):
    """Cross-correlation by explicit loops over output pixels and offsets."""
    n, c_in = values.shape[:2]
    window = kernel.shape[2:]
    padded = np.pad(values, [(0, 0), (0, 0)] + list(pads))
    out_sp = tuple(p - k + 1 for p, k in zip(padded.shape[2:], window))
    out = np.zeros((n, kernel.shape[0]) + out_sp)
    for b, o in itertools.product(range(n), range(kernel.shape[0])):
        for x in itertools.product(*(range(m) for m in out_sp)):
            acc = 0.0
            for ci in range(c_in):
                for off in itertools.product(*(range(k) for k in window)):
                    src = tuple(xi + oi for xi, oi in zip(x, off))
                    acc += kernel[(o, ci) + off] * padded[(b, ci) + src]
            out[(b, o) + x] = acc
    return out


# contract

def test_contract_identity():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(tc.contract("ik,kj->ij", np.eye(2), m), m)


def test_contract_dot_product():
    assert tc.contract("m,m->", np.array([1.0, 2, 3]), np.array([4.0, 5, 6])) == 32


def test_contract_batched_matches_loops(rng):
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 4, 5))
    ref = np.zeros((2, 3, 5))
    for n, i, j, k in itertools.product(range(2), range(3), range(5), range(4)):
        ref[n, i, j] += a[n, i, k] * b[n, k, j]
    np.testing.assert_allclose(tc.contract("nik,nkj->nij", a, b), ref, rtol=1e-12, atol=1e-12)


def test_contract_bilinear(rng):
    a, b, c = rng.normal(size=(3, 4, 5)), rng.normal(size=(3, 4, 5)), rng.normal(size=(5, 2))
    lhs = tc.contract("ijk,kl->ijl", 2.5 * a + b, c)
    rhs = 2.5 * tc.contract("ijk,kl->ijl", a, c) + tc.contract("ijk,kl->ijl", b, c)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-6)


def test_contract_names_mismatched_axis():
    with pytest.raises(DimensionError, match="'k'"):
        tc.contract("ik,kj->ij", np.ones((2, 3)), np.ones((4, 2)))


@pytest.mark.parametrize("spec", ["ik,kj", "ik,kj->iz", "ii,kj->ik"])
def test_contract_rejects_bad_specs(spec):
    with pytest.raises(ValueError):
        tc.contract(spec, np.ones((2, 2)), np.ones((2, 2)))


def test_contract_rank_mismatch():
    with pytest.raises(DimensionError):
        tc.contract("ik,kj->ij", np.ones(2), np.ones((2, 2)))


# softmax

def test_softmax_uniform():
    np.testing.assert_allclose(tc.softmax_over_axis(np.full(4, 3.0), 0), [0.25] * 4)


def test_softmax_closed_form():
    np.testing.assert_allclose(tc.softmax_over_axis(np.array([0.0, np.log(3)]), 0),
                               [0.25, 0.75], rtol=1e-12)


def test_softmax_rows_sum_to_one(rng):
    y = tc.softmax_over_axis(rng.normal(size=(3, 5)), 1)
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, atol=1e-6)


def test_softmax_no_overflow():
    y = tc.softmax_over_axis(np.array([1000.0, 1000.0, -1000.0]), 0)
    np.testing.assert_allclose(y, [0.5, 0.5, 0.0])


def test_softmax_vjp_matches_jacobian(rng):
    x = rng.normal(size=6)
    g = rng.normal(size=6)
    y = tc.softmax_over_axis(x, 0)
    jac = np.diag(y) - np.outer(y, y)
    np.testing.assert_allclose(tc.softmax_vjp(y, g, 0), jac.T @ g, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_softmax_is_a_distribution(xs):
    y = tc.softmax_over_axis(np.array(xs), 0)
    assert np.all(y > 0)
    assert abs(y.sum() - 1) < 1e-6


# slide_window_mac

def test_identity_kernel(rng):
    x = rng.normal(size=(2, 3, 5, 4))
    kernel = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_allclose(tc.slide_window_mac(x, kernel), x, atol=1e-15)


def test_hand_sum():
    out = tc.slide_window_mac(np.array([[[1.0, 2, 3]]]), np.ones((1, 1, 3)), padding=1)
    np.testing.assert_array_equal(out, [[[3.0, 6.0, 5.0]]])


def test_matches_loop_reference(rng):
    x = rng.normal(size=(1, 4, 6, 6))
    kernel = rng.normal(size=(1, 4, 3, 3))
    ref = loop_conv(x, kernel, [(1, 1), (1, 1)])
    np.testing.assert_allclose(tc.slide_window_mac(x, kernel), ref, atol=1e-12)


def test_asymmetric_padding_and_3d_window(rng):
    x = rng.normal(size=(2, 2, 3, 4, 5))
    kernel = rng.normal(size=(3, 2, 1, 3, 2))
    pads = [(0, 0), (2, 0), (1, 0)]
    ref = loop_conv(x, kernel, pads)
    out = tc.slide_window_mac(x, kernel, padding=pads)
    assert out.shape == ref.shape
    np.testing.assert_allclose(out, ref, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.sampled_from([1, 3, 5]), st.sampled_from([1, 3]))
def test_same_padding_preserves_lengths(h, w, kh, kw):
    if kh > h + 2 * (kh // 2) or kw > w + 2 * (kw // 2):
        return
    out = tc.slide_window_mac(np.ones((1, 1, h, w)), np.ones((2, 1, kh, kw)))
    assert out.shape == (1, 2, h, w)


def test_kernel_larger_than_padded_input():
    with pytest.raises(DimensionError):
        tc.slide_window_mac(np.ones((1, 1, 2)), np.ones((1, 1, 5)), padding=0)


def test_slide_window_grads_match_loops(rng):
    x = rng.normal(size=(2, 3, 4, 5))
    kernel = rng.normal(size=(2, 3, 3, 3))
    g = rng.normal(size=(2, 2, 4, 5))
    gv, gk = tc.slide_window_mac_grads(x, kernel, g)
    # the op is bilinear, so <g, conv(x, K)> differentiated coordinatewise is exact
    ref_v = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        e = np.zeros_like(x)
        e[idx] = 1
        ref_v[idx] = np.sum(g * tc.slide_window_mac(e, kernel))
    ref_k = np.zeros_like(kernel)
    for idx in np.ndindex(*kernel.shape):
        e = np.zeros_like(kernel)
        e[idx] = 1
        ref_k[idx] = np.sum(g * tc.slide_window_mac(x, e))
    np.testing.assert_allclose(gv, ref_v, atol=1e-12)
    np.testing.assert_allclose(gk, ref_k, atol=1e-12)


# window_apply

def test_window_apply_matches_loops(rng):
    vals = rng.normal(size=(2, 2, 3, 4, 5))  # (N, U, C, h, w)
    weights = rng.normal(size=(2, 2, 9, 4, 5))
    out = tc.window_apply(vals, weights, (3, 3))
    padded = np.pad(vals, [(0, 0)] * 3 + [(1, 1), (1, 1)])
    ref = np.zeros((2, 3, 4, 5))
    for n, c, i, j in np.ndindex(2, 3, 4, 5):
        for u, (a, b) in itertools.product(range(2), itertools.product(range(3), range(3))):
            ref[n, c, i, j] += weights[n, u, 3 * a + b, i, j] * padded[n, u, c, i + a, j + b]
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_window_apply_constant_weights_is_convolution(rng):
    vals = rng.normal(size=(1, 1, 2, 6, 6))
    taps = rng.normal(size=(3, 3))
    weights = np.broadcast_to(taps.reshape(1, 1, 9, 1, 1), (1, 1, 9, 6, 6))
    kernel = np.zeros((2, 2, 3, 3))
    kernel[0, 0] = kernel[1, 1] = taps
    np.testing.assert_allclose(tc.window_apply(vals, weights, (3, 3)),
                               tc.slide_window_mac(vals[:, 0], kernel), atol=1e-12)


def test_window_apply_grads_are_adjoint(rng):
    vals = rng.normal(size=(1, 2, 2, 3, 4))
    weights = rng.normal(size=(1, 2, 3, 3, 4))
    g = rng.normal(size=(1, 2, 3, 4))
    gv, gw = tc.window_apply_grads(vals, weights, (3, 1), g)
    dv = rng.normal(size=vals.shape)
    dw = rng.normal(size=weights.shape)
    # bilinear: directional derivatives are exact differences
    lin_v = np.sum(g * tc.window_apply(dv, weights, (3, 1)))
    lin_w = np.sum(g * tc.window_apply(vals, dw, (3, 1)))
    assert np.isclose(np.sum(gv * dv), lin_v, rtol=1e-12)
    assert np.isclose(np.sum(gw * dw), lin_w, rtol=1e-12)


def test_window_apply_shape_errors():
    with pytest.raises(DimensionError):
        tc.window_apply(np.ones((1, 1, 1, 4)), np.ones((1, 1, 2, 4)), (3,))


# merge / split

def test_merge_split_examples(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    merged = tc.merge_axes(x, 0, 1)
    assert merged.shape == (6, 4, 4)
    np.testing.assert_array_equal(merged.ravel(), x.ravel())
    back = tc.split_axis(merged, 0, 3)
    assert back.shape == (2, 3, 4, 4)
    assert back.tobytes() == x.tobytes()


def test_split_not_divisible():
    with pytest.raises(DimensionError):
        tc.split_axis(np.ones((5, 2)), 0, 3)


def test_merge_requires_adjacent_axes():
    with pytest.raises(DimensionError):
        tc.merge_axes(np.ones((2, 3, 4)), 0, 2)


def test_check_finite():
    with pytest.raises(FloatingPointError):
        tc.check_finite(np.array([1.0, np.nan]))
