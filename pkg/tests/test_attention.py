import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glmdesk import _backend
from glmdesk.attention import (
    HeadLayout,
    MaskSpec,
    attention_backward,
    attention_naive,
    attention_tiled,
    build_mask,
    replicate_kv,
)
from glmdesk.errors import FullyMaskedRowError, ShapeError
from glmdesk.oracles import multi_query_attention, replicated_kv_attention


def _qkv(rng, h, g, s_q, s_k, d, dtype=np.float32):
    return (rng.standard_normal((h, s_q, d)).astype(dtype),
            rng.standard_normal((g, s_k, d)).astype(dtype),
            rng.standard_normal((g, s_k, d)).astype(dtype))


# masks

def test_causal_mask_lower_triangular():
    np.testing.assert_array_equal(build_mask(MaskSpec.causal(), 3, 3), np.tril(np.ones((3, 3), bool)))


def test_prefix_mask():
    m = build_mask(MaskSpec.prefix(3), 5, 5)
    assert m[:, :3].all()
    np.testing.assert_array_equal(m[3:, 3:], np.tril(np.ones((2, 2), bool)))
    assert not m[:3, 3:].any()


def test_decode_step_sees_all_keys():
    assert build_mask(MaskSpec.causal(), 1, 7, q_offset=6).all()


def test_explicit_mask_with_empty_row_rejected():
    with pytest.raises(FullyMaskedRowError):
        MaskSpec.explicit([[True, False], [False, False]])


# layout

def test_head_layout_block_contiguous():
    layout = HeadLayout(8, 2, 4)
    assert [layout.group_of(i) for i in range(8)] == [0, 0, 0, 0, 1, 1, 1, 1]
    assert layout.kv_elements(10) == 2 * 2 * 10 * 4


def test_head_layout_requires_divisibility():
    with pytest.raises(ValueError):
        HeadLayout(6, 4, 8)


# naive attention

def test_single_key_returns_its_value(backend, rng):
    q, k, v = _qkv(rng, 4, 2, 3, 1, 8)
    out = attention_naive(q, k, v, HeadLayout(4, 2, 8), MaskSpec.full())
    for head in range(4):
        np.testing.assert_allclose(out[head], np.broadcast_to(v[head // 2, 0], (3, 8)), atol=1e-6)


def test_identical_values_are_returned(backend, rng):
    q, k, _ = _qkv(rng, 2, 1, 4, 6, 8)
    row = rng.standard_normal(8).astype(np.float32)
    v = np.broadcast_to(row, (1, 6, 8)).copy()
    out = attention_naive(q, k, v, HeadLayout(2, 1, 8), MaskSpec.causal())
    np.testing.assert_allclose(out, np.broadcast_to(row, out.shape), atol=1e-6)


@pytest.mark.parametrize("groups", [1, 2, 4])
def test_gqa_matches_replicated_kv_oracle(backend, rng, groups):
    q, k, v = _qkv(rng, 4, groups, 9, 9, 16)
    layout = HeadLayout(4, groups, 16)
    vis = build_mask(MaskSpec.causal(), 9, 9)
    out = attention_naive(q, k, v, layout, MaskSpec.causal())
    np.testing.assert_allclose(out, replicated_kv_attention(q, k, v, 4, groups, vis), atol=1e-6, rtol=0)
    if groups == 1:
        np.testing.assert_allclose(out, multi_query_attention(q, k[0], v[0], vis), atol=1e-6, rtol=0)


def test_replicate_kv_round_trip(rng):
    layout = HeadLayout(6, 3, 4)
    _, k, v = _qkv(rng, 6, 3, 5, 5, 4)
    q = rng.standard_normal((6, 5, 4)).astype(np.float32)
    full = attention_naive(q, replicate_kv(k, layout), replicate_kv(v, layout), HeadLayout(6, 6, 4), MaskSpec.full())
    np.testing.assert_allclose(attention_naive(q, k, v, layout, MaskSpec.full()), full, atol=1e-6)


def test_shape_checks(rng):
    q, k, v = _qkv(rng, 4, 2, 3, 3, 8)
    with pytest.raises(ShapeError):
        attention_naive(q, k, v, HeadLayout(4, 1, 8), MaskSpec.full())


def test_attention_backward_matches_fd(rng):
    q, k, v = _qkv(rng, 4, 2, 5, 5, 4, dtype=np.float64)
    layout = HeadLayout(4, 2, 4)
    dout = rng.standard_normal(q.shape)
    _, probs = attention_naive(q, k, v, layout, MaskSpec.prefix(2), return_probs=True)
    grads = attention_backward(q, k, v, layout, probs, dout)
    f = lambda: np.sum(attention_naive(q, k, v, layout, MaskSpec.prefix(2)) * dout)  # noqa: E731
    for analytic, arr in zip(grads, (q, k, v)):
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + 1e-6
            up = f()
            arr[idx] = old - 1e-6
            down = f()
            arr[idx] = old
            num[idx] = (up - down) / 2e-6
        np.testing.assert_allclose(analytic, num, atol=1e-7)


# tiled attention

def test_single_tile_matches_naive(backend, rng):
    q, k, v = _qkv(rng, 4, 2, 20, 20, 8)
    layout = HeadLayout(4, 2, 8)
    np.testing.assert_allclose(attention_tiled(q, k, v, layout, MaskSpec.causal(), 20),
                               attention_naive(q, k, v, layout, MaskSpec.causal()), atol=1e-6, rtol=0)


@pytest.mark.parametrize("mask", [MaskSpec.causal(), MaskSpec.prefix(23), MaskSpec.full()], ids=["causal", "prefix", "full"])
@pytest.mark.parametrize("tile", [1, 3, 16, 64, 69])
def test_tiled_matches_naive(backend, rng, mask, tile):
    q, k, v = _qkv(rng, 4, 2, 64, 64, 16)
    layout = HeadLayout(4, 2, 16)
    np.testing.assert_allclose(attention_tiled(q, k, v, layout, mask, tile),
                               attention_naive(q, k, v, layout, mask), atol=1e-5, rtol=0)


def test_causal_tiles_above_diagonal_skipped(backend, rng):
    q, k, v = _qkv(rng, 2, 1, 64, 64, 8)
    layout = HeadLayout(2, 1, 8)
    out, skipped = attention_tiled(q, k, v, layout, MaskSpec.causal(), 16, return_stats=True)
    assert skipped == 2 * 6  # 4x4 grid, 6 blocks strictly above the diagonal, per head
    np.testing.assert_allclose(out, attention_naive(q, k, v, layout, MaskSpec.causal()), atol=1e-5)


def test_tiled_with_query_offset(backend, rng):
    q, k, v = _qkv(rng, 2, 2, 3, 10, 8)
    layout = HeadLayout(2, 2, 8)
    np.testing.assert_allclose(attention_tiled(q, k, v, layout, MaskSpec.causal(), 4, q_offset=7),
                               attention_naive(q, k, v, layout, MaskSpec.causal(), q_offset=7), atol=1e-6)


def test_tiled_backends_bitwise(rng):
    q, k, v = _qkv(rng, 4, 2, 37, 37, 8)
    layout = HeadLayout(4, 2, 8)
    outs = []
    for name in ("numba", "numpy"):
        with _backend.use_backend(name):
            outs.append(attention_tiled(q, k, v, layout, MaskSpec.prefix(11), 5).tobytes())
    assert outs[0] == outs[1]


@given(s=st.integers(1, 40), tile=st.integers(1, 45), prefix=st.integers(0, 40), seed=st.integers(0, 2**31))
@settings(max_examples=40, deadline=None)
def test_tiled_matches_naive_property(s, tile, prefix, seed):
    g = np.random.default_rng(seed)
    q, k, v = _qkv(g, 2, 1, s, s, 4)
    layout = HeadLayout(2, 1, 4)
    mask = MaskSpec.prefix(min(prefix, s))
    np.testing.assert_allclose(attention_tiled(q, k, v, layout, mask, tile),
                               attention_naive(q, k, v, layout, mask), atol=1e-5, rtol=0)


def test_bad_tile_size(rng):
    q, k, v = _qkv(rng, 2, 1, 4, 4, 4)
    with pytest.raises(ValueError):
        attention_tiled(q, k, v, HeadLayout(2, 1, 4), MaskSpec.full(), 0)
