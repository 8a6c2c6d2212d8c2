"""Scaled dot-product attention with GQA/MQA head sharing.

Two evaluation paths produce the same result: :func:`attention_naive`
materialises the score matrix, :func:`attention_tiled` streams key tiles
through an online softmax and never holds more than one tile of scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._backend import njit
from .errors import FullyMaskedRowError, ShapeError
from .numerics import Tensor, matmul, softmax_rows

_FULL, _CAUSAL, _PREFIX, _EXPLICIT = 0, 1, 2, 3
_KINDS = {"full": _FULL, "causal": _CAUSAL, "prefix": _PREFIX, "explicit": _EXPLICIT}


@dataclass(frozen=True)
class MaskSpec:
    kind: str
    prefix_len: int = 0
    matrix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown mask kind {self.kind!r}")
        if self.kind == "prefix" and self.prefix_len < 0:
            raise ValueError("prefix_len must be non-negative")
        if self.kind == "explicit":
            m = np.asarray(self.matrix, dtype=bool)
            if m.ndim != 2:
                raise ShapeError("explicit mask must be a 2-D boolean matrix")
            if not m.any(axis=1).all():
                raise FullyMaskedRowError(int(np.flatnonzero(~m.any(axis=1))[0]))
            object.__setattr__(self, "matrix", m)

    @classmethod
    def causal(cls) -> "MaskSpec":
        return cls("causal")

    @classmethod
    def full(cls) -> "MaskSpec":
        return cls("full")

    @classmethod
    def prefix(cls, prefix_len: int) -> "MaskSpec":
        return cls("prefix", prefix_len=prefix_len)

    @classmethod
    def explicit(cls, matrix) -> "MaskSpec":
        return cls("explicit", matrix=np.asarray(matrix, dtype=bool))


@dataclass(frozen=True)
class HeadLayout:
    n_heads: int
    n_kv_groups: int
    head_dim: int

    def __post_init__(self):
        if min(self.n_heads, self.n_kv_groups, self.head_dim) < 1:
            raise ValueError("head layout sizes must be positive")
        if self.n_heads % self.n_kv_groups:
            raise ValueError(
                f"n_heads={self.n_heads} is not divisible by n_kv_groups={self.n_kv_groups}"
            )

    @property
    def heads_per_group(self) -> int:
        return self.n_heads // self.n_kv_groups

    def group_of(self, head: int) -> int:
        # block-contiguous: heads [i*h/g, (i+1)*h/g) share group i
        return head // self.heads_per_group

    def group_index(self) -> np.ndarray:
        return np.arange(self.n_heads, dtype=np.int64) // self.heads_per_group

    def kv_elements(self, seq_len: int) -> int:
        """Number of cached K plus V values for one layer at ``seq_len``."""
        return 2 * self.n_kv_groups * seq_len * self.head_dim


def build_mask(spec: MaskSpec, s_q: int, s_k: int, q_offset: int = 0) -> np.ndarray:
    """Boolean visibility matrix ``[s_q, s_k]``; True means the key is visible.

    Query ``i`` sits at absolute position ``i + q_offset`` among the keys.
    """
    if s_q < 1 or s_k < 1:
        raise ValueError("mask sizes must be positive")
    if q_offset < 0:
        raise ValueError("q_offset must be non-negative")
    if spec.kind == "explicit":
        if spec.matrix.shape != (s_q, s_k):
            raise ShapeError(f"explicit mask is {spec.matrix.shape}, expected {(s_q, s_k)}")
        return spec.matrix.copy()
    if spec.kind == "full":
        return np.ones((s_q, s_k), dtype=bool)
    if spec.kind == "prefix" and spec.prefix_len > s_k:
        raise ValueError(f"prefix_len {spec.prefix_len} exceeds key length {s_k}")
    rows = np.arange(s_q)[:, None] + q_offset
    cols = np.arange(s_k)[None, :]
    vis = cols <= rows
    if spec.kind == "prefix":
        vis |= cols < spec.prefix_len
    return vis


def _check_qkv(q, k, v, layout: HeadLayout):
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise ShapeError("q, k, v must be [heads, seq, head_dim]")
    if q.shape[0] != layout.n_heads:
        raise ShapeError(f"q has {q.shape[0]} heads, layout expects {layout.n_heads}")
    if k.shape[0] != layout.n_kv_groups or v.shape[0] != layout.n_kv_groups:
        raise ShapeError(
            f"k/v have {k.shape[0]}/{v.shape[0]} groups, layout expects {layout.n_kv_groups}"
        )
    if k.shape != v.shape:
        raise ShapeError(f"k shape {k.shape} != v shape {v.shape}")
    if q.shape[2] != k.shape[2] or q.shape[2] != layout.head_dim:
        raise ShapeError(f"head_dim mismatch: q {q.shape}, k {k.shape}, layout {layout.head_dim}")


def attention_naive(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    layout: HeadLayout,
    mask: MaskSpec,
    q_offset: int = 0,
    *,
    return_probs: bool = False,
):
    """``softmax(q k^T / sqrt(d) + mask) v`` per query head.

    Query head ``i`` reads KV group ``layout.group_of(i)``.  With
    ``return_probs`` the per-head probability matrices are returned too.
    """
    _check_qkv(q, k, v, layout)
    h, s_q, d = q.shape
    s_k = k.shape[1]
    vis = build_mask(mask, s_q, s_k, q_offset)
    scale = np.asarray(1.0 / math.sqrt(d), dtype=q.dtype)
    out = np.empty(q.shape, dtype=q.dtype)
    probs = np.empty((h, s_q, s_k), dtype=q.dtype) if return_probs else None
    for head in range(h):
        grp = layout.group_of(head)
        scores = matmul(q[head] * scale, k[grp].T)
        scores[~vis] = -np.inf
        p = softmax_rows(scores)
        out[head] = matmul(p, v[grp])
        if probs is not None:
            probs[head] = p
    return (out, probs) if return_probs else out


def attention_backward(q, k, v, layout: HeadLayout, probs, dout):
    """Gradients ``(dq, dk, dv)`` of :func:`attention_naive` given its probabilities."""
    d = q.shape[2]
    scale = np.asarray(1.0 / math.sqrt(d), dtype=q.dtype)
    dq = np.zeros_like(q)
    dk = np.zeros_like(k)
    dv = np.zeros_like(v)
    for head in range(q.shape[0]):
        grp = layout.group_of(head)
        p = probs[head]
        dv[grp] += matmul(p.T, dout[head])
        dp = matmul(dout[head], v[grp].T)
        ds = p * (dp - np.sum(dp * p, axis=1, keepdims=True))
        dq[head] = matmul(ds, k[grp]) * scale
        dk[grp] += matmul(ds.T, q[head] * scale)
    return dq, dk, dv


# --------------------------------------------------------------------------
# tiled (online softmax)


def _mask_params(mask: MaskSpec, s_q: int, s_k: int):
    if mask.kind == "prefix" and mask.prefix_len > s_k:
        raise ValueError(f"prefix_len {mask.prefix_len} exceeds key length {s_k}")
    if mask.kind == "explicit":
        if mask.matrix.shape != (s_q, s_k):
            raise ShapeError(f"explicit mask is {mask.matrix.shape}, expected {(s_q, s_k)}")
        explicit = np.ascontiguousarray(mask.matrix)
    else:
        explicit = np.ones((1, 1), dtype=bool)
    return _KINDS[mask.kind], mask.prefix_len, explicit


@njit
def _visible(kind, prefix_len, q_offset, explicit, i, j):
    if kind == 0:
        return True
    if kind == 3:
        return explicit[i, j]
    if kind == 2 and j < prefix_len:
        return True
    return j <= i + q_offset


@njit
def _tile_dead(kind, prefix_len, q_offset, last_query, first_key):
    # True when no query in the tile can see any key in the tile
    if kind == 1:
        return first_key > last_query + q_offset
    if kind == 2:
        return first_key >= prefix_len and first_key > last_query + q_offset
    return False


@njit
def _tiled_nb(q, k, v, group_of, kind, prefix_len, q_offset, explicit, tile, scale, out):
    h, s_q, d = q.shape
    s_k = k.shape[1]
    skipped = 0
    scores = np.empty(tile)
    for head in range(h):
        g = group_of[head]
        for q0 in range(0, s_q, tile):
            q1 = min(q0 + tile, s_q)
            nq = q1 - q0
            run_max = np.full(nq, -np.inf)
            run_sum = np.zeros(nq)
            acc = np.zeros((nq, d))
            for k0 in range(0, s_k, tile):
                if _tile_dead(kind, prefix_len, q_offset, q1 - 1, k0):
                    skipped += 1
                    continue
                k1 = min(k0 + tile, s_k)
                for ii in range(nq):
                    i = q0 + ii
                    tile_max = -np.inf
                    for jj in range(k1 - k0):
                        j = k0 + jj
                        if _visible(kind, prefix_len, q_offset, explicit, i, j):
                            dot = 0.0
                            for c in range(d):
                                dot += (q[head, i, c] * scale) * k[g, j, c]
                            scores[jj] = dot
                            if dot > tile_max:
                                tile_max = dot
                        else:
                            scores[jj] = -np.inf
                    if tile_max == -np.inf:
                        continue
                    new_max = max(run_max[ii], tile_max)
                    alpha = np.exp(run_max[ii] - new_max)
                    run_sum[ii] *= alpha
                    for c in range(d):
                        acc[ii, c] *= alpha
                    for jj in range(k1 - k0):
                        if scores[jj] != -np.inf:
                            p = np.exp(scores[jj] - new_max)
                            run_sum[ii] += p
                            for c in range(d):
                                acc[ii, c] += p * v[g, k0 + jj, c]
                    run_max[ii] = new_max
            for ii in range(nq):
                if run_sum[ii] == 0.0:
                    return -(q0 + ii) - 1, skipped
                for c in range(d):
                    out[head, q0 + ii, c] = acc[ii, c] / run_sum[ii]
    return 0, skipped


def _tiled_np(q, k, v, group_of, kind, prefix_len, q_offset, explicit, tile, scale, out):
    h, s_q, d = q.shape
    s_k = k.shape[1]
    skipped = 0
    q64 = q.astype(np.float64) * scale
    k64 = k.astype(np.float64)
    v64 = v.astype(np.float64)
    for head in range(h):
        g = group_of[head]
        for q0 in range(0, s_q, tile):
            q1 = min(q0 + tile, s_q)
            rows = np.arange(q0, q1)[:, None]
            run_max = np.full(q1 - q0, -np.inf)
            run_sum = np.zeros(q1 - q0)
            acc = np.zeros((q1 - q0, d))
            for k0 in range(0, s_k, tile):
                last = q1 - 1 + q_offset
                if (kind == _CAUSAL and k0 > last) or (kind == _PREFIX and k0 >= prefix_len and k0 > last):
                    skipped += 1
                    continue
                k1 = min(k0 + tile, s_k)
                cols = np.arange(k0, k1)[None, :]
                if kind == _FULL:
                    vis = np.ones((q1 - q0, k1 - k0), dtype=bool)
                elif kind == _EXPLICIT:
                    vis = explicit[q0:q1, k0:k1]
                else:
                    vis = cols <= rows + q_offset
                    if kind == _PREFIX:
                        vis = vis | (cols < prefix_len)
                s = q64[head, q0:q1] @ k64[g, k0:k1].T
                s = np.where(vis, s, -np.inf)
                new_max = np.maximum(run_max, s.max(axis=1))
                live = new_max > -np.inf
                safe_max = np.where(live, new_max, 0.0)
                alpha = np.where(live, np.exp(run_max - safe_max), 1.0)
                p = np.exp(s - safe_max[:, None])
                run_sum = run_sum * alpha + p.sum(axis=1)
                acc = acc * alpha[:, None] + p @ v64[g, k0:k1]
                run_max = new_max
            dead = np.flatnonzero(run_sum == 0.0)
            if dead.size:
                return -(q0 + int(dead[0])) - 1, skipped
            out[head, q0:q1] = acc / run_sum[:, None]
    return 0, skipped


def attention_tiled(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    layout: HeadLayout,
    mask: MaskSpec,
    tile_size: int,
    q_offset: int = 0,
    *,
    return_stats: bool = False,
):
    """Flash-style attention over ``tile_size`` x ``tile_size`` blocks.

    Keeps a running max, running denominator and rescaled accumulator per
    query row (float64).  Blocks that the mask hides entirely are skipped;
    ``return_stats`` also returns how many were skipped.
    """
    if tile_size < 1:
        raise ValueError(f"tile_size must be >= 1, got {tile_size}")
    _check_qkv(q, k, v, layout)
    s_q, s_k = q.shape[1], k.shape[1]
    kind, prefix_len, explicit = _mask_params(mask, s_q, s_k)
    out = np.empty(q.shape, dtype=q.dtype)
    args = (
        np.ascontiguousarray(q),
        np.ascontiguousarray(k),
        np.ascontiguousarray(v),
        layout.group_index(),
        kind,
        prefix_len,
        q_offset,
        explicit,
        tile_size,
        1.0 / math.sqrt(q.shape[2]),
        out,
    )
    if _backend.use_numba():
        status, skipped = _tiled_nb(*args)
    else:
        status, skipped = _tiled_np(*args)
    if status < 0:
        raise FullyMaskedRowError(-status - 1)
    return (out, int(skipped)) if return_stats else out


def replicate_kv(k: Tensor, layout: HeadLayout) -> Tensor:
    """Expand ``[groups, s, d]`` to ``[heads, s, d]`` following the head→group map."""
    return np.repeat(k, layout.heads_per_group, axis=0)
