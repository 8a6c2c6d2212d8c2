"""Dense numeric kernels shared by every other module.

Tensors are plain ``numpy.ndarray`` objects (C order, float32 by default).
Matrix products use a fixed summation order so results are bit-reproducible
and identical between the numba and numpy backends.
"""

from __future__ import annotations

import numpy as np

from . import _backend
from ._backend import njit
from .errors import FullyMaskedRowError, ShapeError

Tensor = np.ndarray

DEFAULT_DTYPE = np.float32


def make_rng(seed: int | np.random.Generator) -> np.random.Generator:
    """Seeded PCG64 generator; passes an existing generator through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_tensor(x, dtype=None) -> Tensor:
    arr = np.asarray(x, dtype=dtype if dtype is not None else None)
    if arr.dtype.kind != "f":
        arr = arr.astype(DEFAULT_DTYPE)
    return np.ascontiguousarray(arr)


def check_finite(x: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(x)):
        bad = int(np.size(x) - np.count_nonzero(np.isfinite(x)))
        raise FloatingPointError(f"{what}: {bad} non-finite value(s)")
    return x


# --------------------------------------------------------------------------
# matmul


@njit
def _matmul_nb(a, b, out):
    m, k = a.shape
    n = b.shape[1]
    for i in range(m):
        for j in range(n):
            out[i, j] = 0.0
        for p in range(k):
            aip = a[i, p]
            for j in range(n):
                out[i, j] += aip * b[p, j]
    return out


def _matmul_np(a, b, out):
    out[...] = 0.0
    for p in range(a.shape[1]):
        out += a[:, p : p + 1] * b[p]
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` with left-to-right accumulation over the inner dimension.

    ``a`` may carry leading batch dimensions (``[..., k]``); ``b`` is 2-D.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    dtype = np.result_type(a.dtype, b.dtype, DEFAULT_DTYPE)
    lead = a.shape[:-1]
    a2 = np.ascontiguousarray(a.reshape(-1, a.shape[-1]), dtype=dtype)
    b2 = np.ascontiguousarray(b, dtype=dtype)
    out = np.empty((a2.shape[0], b2.shape[1]), dtype=dtype)
    if a2.shape[0] and b2.shape[1]:
        if _backend.use_numba():
            _matmul_nb(a2, b2, out)
        else:
            _matmul_np(a2, b2, out)
    return out.reshape(*lead, b2.shape[1])


# --------------------------------------------------------------------------
# softmax


@njit
def _softmax_rows_nb(x, out):
    m, n = x.shape
    for i in range(m):
        mx = -np.inf
        for j in range(n):
            if x[i, j] > mx:
                mx = x[i, j]
        if mx == -np.inf:
            return i
        total = 0.0
        for j in range(n):
            e = np.exp(np.float64(x[i, j]) - mx)
            out[i, j] = e
            total += e
        for j in range(n):
            out[i, j] = out[i, j] / total
    return -1


def _softmax_rows_np(x, out):
    mx = x.max(axis=1)
    dead = np.flatnonzero(mx == -np.inf)
    if dead.size:
        return int(dead[0])
    e = np.exp(x.astype(np.float64) - mx[:, None])
    total = np.cumsum(e, axis=1)[:, -1]
    out[...] = e / total[:, None]
    return -1


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor.

    ``-inf`` entries are treated as masked and receive probability 0.  A row
    with no finite entry raises :class:`FullyMaskedRowError`.  Exponentials
    and the row sum are evaluated in float64; the result has ``x``'s dtype.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2-D tensor, got shape {x.shape}")
    if x.dtype.kind != "f":
        x = x.astype(DEFAULT_DTYPE)
    if np.isnan(x).any() or np.isposinf(x).any():
        raise FloatingPointError("softmax_rows: NaN or +inf in input")
    x = np.ascontiguousarray(x)
    work = np.empty(x.shape, dtype=np.float64)
    if x.shape[1] == 0:
        raise FullyMaskedRowError(0 if x.shape[0] else None)
    if _backend.use_numba():
        dead = _softmax_rows_nb(x, work)
    else:
        dead = _softmax_rows_np(x, work)
    if dead >= 0:
        raise FullyMaskedRowError(dead)
    return work.astype(x.dtype)


def sigmoid(x: Tensor) -> Tensor:
    return np.exp(-np.logaddexp(0.0, -x)).astype(x.dtype, copy=False)


def silu(x: Tensor) -> Tensor:
    return x * sigmoid(x)


def log_softmax_rows(x: Tensor) -> Tensor:
    """Numerically stable row-wise log-softmax (float64 internally)."""
    x64 = np.asarray(x, dtype=np.float64)
    mx = x64.max(axis=-1, keepdims=True)
    shifted = x64 - mx
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return (shifted - lse).astype(np.result_type(x.dtype, DEFAULT_DTYPE))
