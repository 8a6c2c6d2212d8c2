import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glmdesk.errors import BiasPolicyError
from glmdesk.layers import (
    LinearLayer,
    RMSNormLayer,
    SwiGLUFFN,
    ffn_size,
    init_std,
    linear,
    linear_backward,
    rms_norm,
    rms_norm_backward,
    swiglu_ffn,
    swiglu_ffn_backward,
)


def _numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


# RMSNorm

def test_rmsnorm_unit_rms():
    out = rms_norm(np.ones(4), RMSNormLayer(np.ones(4), eps=0.0))
    np.testing.assert_allclose(out, np.ones(4))


def test_rmsnorm_zero_input():
    out = rms_norm(np.zeros(4, np.float32), RMSNormLayer(np.ones(4, np.float32), eps=1e-5))
    np.testing.assert_array_equal(out, np.zeros(4))


def test_rmsnorm_direct_formula():
    out = rms_norm(np.array([3.0, 4.0]), RMSNormLayer(np.ones(2), eps=0.0))
    np.testing.assert_allclose(out, [3 / math.sqrt(12.5), 4 / math.sqrt(12.5)], rtol=1e-12)


def test_rmsnorm_rejects_negative_eps():
    with pytest.raises(ValueError):
        RMSNormLayer(np.ones(2), eps=-1.0)


@given(scale=st.floats(0.1, 100.0))
@settings(max_examples=30, deadline=None)
def test_rmsnorm_scale_invariant(scale):
    x = np.linspace(-1.0, 2.0, 8)
    layer = RMSNormLayer(np.ones(8), eps=0.0)
    np.testing.assert_allclose(rms_norm(x * scale, layer), rms_norm(x, layer), rtol=1e-10)


def test_rmsnorm_backward_matches_fd(rng):
    x = rng.standard_normal((3, 5))
    layer = RMSNormLayer(rng.standard_normal(5), eps=1e-5)
    dy = rng.standard_normal((3, 5))
    dx, dg = rms_norm_backward(x, layer, dy)
    np.testing.assert_allclose(dx, _numeric_grad(lambda: np.sum(rms_norm(x, layer) * dy), x), atol=1e-7)
    np.testing.assert_allclose(dg, _numeric_grad(lambda: np.sum(rms_norm(x, layer) * dy), layer.gamma), atol=1e-7)


# SwiGLU

def _ffn(rng, h=6, f=32, dtype=np.float64):
    return SwiGLUFFN(*(rng.standard_normal(s).astype(dtype) for s in ((h, f), (h, f), (f, h))))


def test_swiglu_zero_input(rng):
    assert np.all(swiglu_ffn(np.zeros((2, 6)), _ffn(rng)) == 0)


def test_swiglu_zero_up_annihilates(rng):
    ffn = _ffn(rng)
    ffn = SwiGLUFFN(ffn.w_gate, np.zeros_like(ffn.w_up), ffn.w_down)
    assert np.all(swiglu_ffn(rng.standard_normal((3, 6)), ffn) == 0)


def test_swiglu_elementwise_oracle(rng):
    ffn = _ffn(rng, dtype=np.float32)
    x = rng.standard_normal((4, 6)).astype(np.float32)
    xd = x.astype(np.float64)
    gate = xd @ ffn.w_gate.astype(np.float64)
    up = xd @ ffn.w_up.astype(np.float64)
    hidden = np.empty_like(gate)
    for idx in np.ndindex(gate.shape):
        g = gate[idx]
        hidden[idx] = g / (1.0 + math.exp(-g)) * up[idx]
    expected = hidden @ ffn.w_down.astype(np.float64)
    np.testing.assert_allclose(swiglu_ffn(x, ffn), expected, atol=1e-5, rtol=1e-5)


def test_swiglu_backward_matches_fd(rng):
    ffn = _ffn(rng)
    x = rng.standard_normal((3, 6))
    dy = rng.standard_normal((3, 6))
    out, cache = swiglu_ffn(x, ffn, return_cache=True)
    dx, dwg, dwu, dwd = swiglu_ffn_backward(x, ffn, cache, dy)
    f = lambda: np.sum(swiglu_ffn(x, ffn) * dy)  # noqa: E731
    for analytic, arr in ((dx, x), (dwg, ffn.w_gate), (dwu, ffn.w_up), (dwd, ffn.w_down)):
        np.testing.assert_allclose(analytic, _numeric_grad(f, arr), atol=1e-6, rtol=1e-6)


# FFN width

@pytest.mark.parametrize("hidden,expected", [(96, 320), (3, 32), (4096, 13664)])
def test_ffn_size(hidden, expected):
    assert ffn_size(hidden) == expected


@given(st.integers(1, 20000))
def test_ffn_size_is_smallest_granule_multiple(hidden):
    f = ffn_size(hidden)
    assert f % 32 == 0
    assert 3 * f >= 10 * hidden > 3 * (f - 32)


# Linear

def test_linear_identity():
    out = linear(np.array([1.0, 0.0]), LinearLayer(np.eye(2)))
    np.testing.assert_array_equal(out, [1.0, 0.0])


def test_linear_bias_pass_through(rng):
    layer = LinearLayer(rng.standard_normal((2, 2)), np.array([1.0, 2.0]), role="q")
    np.testing.assert_array_equal(linear(np.zeros(2), layer), [1.0, 2.0])


def test_linear_matches_matmul_add(rng):
    w = rng.standard_normal((5, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    x = rng.standard_normal((4, 5)).astype(np.float32)
    expected = x.astype(np.float64) @ w.astype(np.float64) + b
    np.testing.assert_allclose(linear(x, LinearLayer(w, b, role="v")), expected, atol=1e-6)


@pytest.mark.parametrize("role", ["o", "up", "gate", "down", "other"])
def test_bias_only_on_qkv(role):
    with pytest.raises(BiasPolicyError):
        LinearLayer(np.eye(2), np.zeros(2), role=role)


def test_linear_backward_matches_fd(rng):
    layer = LinearLayer(rng.standard_normal((4, 3)), rng.standard_normal(3), role="k")
    x = rng.standard_normal((2, 4))
    dy = rng.standard_normal((2, 3))
    dx, dw, db = linear_backward(x, layer, dy)
    f = lambda: np.sum(linear(x, layer) * dy)  # noqa: E731
    np.testing.assert_allclose(dx, _numeric_grad(f, x), atol=1e-7)
    np.testing.assert_allclose(dw, _numeric_grad(f, layer.weight), atol=1e-7)
    np.testing.assert_allclose(db, _numeric_grad(f, layer.bias), atol=1e-7)


def test_init_std_residual_scaling():
    assert init_std(8) == 0.02
    assert init_std(8, residual=True) == pytest.approx(0.02 / math.sqrt(16))
