import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from glmdesk import _backend
from glmdesk.errors import FullyMaskedRowError, ShapeError
from glmdesk.numerics import log_softmax_rows, make_rng, matmul, silu, softmax_rows
from glmdesk.oracles import triple_loop_matmul


def test_identity_matmul(backend):
    a = np.array([[1, 2], [3, 4]], dtype=np.float32)
    np.testing.assert_array_equal(matmul(np.eye(2, dtype=np.float32), a), a)


def test_zero_matmul(backend):
    out = matmul(np.array([[1.0, 2.0]], dtype=np.float32), np.zeros((2, 1), dtype=np.float32))
    np.testing.assert_array_equal(out, [[0.0]])


def test_matmul_matches_triple_loop(backend, rng):
    a = rng.standard_normal((5, 7)).astype(np.float32)
    b = rng.standard_normal((7, 3)).astype(np.float32)
    np.testing.assert_allclose(matmul(a, b), triple_loop_matmul(a, b), atol=1e-6, rtol=0)


def test_matmul_batched_leading_dims(backend, rng):
    a = rng.standard_normal((2, 3, 4)).astype(np.float32)
    b = rng.standard_normal((4, 5)).astype(np.float32)
    out = matmul(a, b)
    assert out.shape == (2, 3, 5)
    np.testing.assert_allclose(out, a @ b, atol=1e-5)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3), np.float32), np.ones((4, 2), np.float32))


def test_matmul_backends_bitwise(rng):
    a = rng.standard_normal((17, 33)).astype(np.float32)
    b = rng.standard_normal((33, 9)).astype(np.float32)
    with _backend.use_backend("numpy"):
        ref = matmul(a, b)
    with _backend.use_backend("numba"):
        out = matmul(a, b)
    assert ref.tobytes() == out.tobytes()


def test_softmax_equal_logits(backend):
    np.testing.assert_allclose(softmax_rows(np.zeros((1, 3), np.float32)), [[1 / 3] * 3], atol=1e-7)


@given(x=st.floats(-50, 50), c=st.floats(-5, 5))
@settings(max_examples=50, deadline=None)
def test_softmax_shift_invariance(x, c):
    row = np.array([[x, x + c, x + 2 * c]], dtype=np.float64)
    base = np.array([[0.0, c, 2 * c]])
    np.testing.assert_allclose(softmax_rows(row), softmax_rows(base), atol=1e-6)


def test_softmax_high_precision_oracle(backend):
    from fractions import Fraction

    exps = [Fraction(math.exp(v)) for v in (1.0, 2.0, 3.0)]
    total = sum(exps)
    expected = [float(e / total) for e in exps]
    np.testing.assert_allclose(softmax_rows(np.array([[1.0, 2.0, 3.0]])), [expected], atol=1e-7)


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=8),
                  elements=st.floats(-30, 30)))
@settings(max_examples=60, deadline=None)
def test_softmax_rows_are_distributions(x):
    p = softmax_rows(x)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_masked_entries_are_zero(backend):
    x = np.array([[0.0, -np.inf, 1.0]], dtype=np.float32)
    p = softmax_rows(x)
    assert p[0, 1] == 0.0
    np.testing.assert_allclose(p.sum(), 1.0, atol=1e-6)


def test_softmax_fully_masked_row_raises(backend):
    x = np.array([[0.0, 1.0], [-np.inf, -np.inf]], dtype=np.float32)
    with pytest.raises(FullyMaskedRowError) as err:
        softmax_rows(x)
    assert err.value.row == 1


def test_softmax_rejects_nan(backend):
    with pytest.raises(FloatingPointError):
        softmax_rows(np.array([[0.0, np.nan]], dtype=np.float32))


def test_softmax_backends_bitwise(rng):
    x = rng.standard_normal((31, 47)).astype(np.float32) * 10
    with _backend.use_backend("numpy"):
        ref = softmax_rows(x)
    with _backend.use_backend("numba"):
        out = softmax_rows(x)
    assert ref.tobytes() == out.tobytes()


def test_log_softmax_consistent(rng):
    x = rng.standard_normal((4, 6))
    np.testing.assert_allclose(np.exp(log_softmax_rows(x)), softmax_rows(x), atol=1e-12)


def test_silu_zero():
    assert silu(np.zeros(3)).tolist() == [0.0, 0.0, 0.0]


def test_make_rng_is_reproducible():
    assert make_rng(5).random() == make_rng(5).random()
    g = np.random.default_rng(0)
    assert make_rng(g) is g
