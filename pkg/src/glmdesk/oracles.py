"""Slow, independent reference computations used to check the fast paths.

Nothing here calls the package's kernels: attention is evaluated in float64
with einsum on explicitly replicated key/value heads, gradients by central
differences, Jaccard by set arithmetic.
"""

from __future__ import annotations

import numpy as np


def replicated_kv_attention(q, k, v, n_heads: int, n_groups: int, visible) -> np.ndarray:
    """Multi-head attention after copying KV group ``floor(i*g/h)`` to head ``i``."""
    q = np.asarray(q, dtype=np.float64)
    d = q.shape[-1]
    k_rep = np.stack([np.asarray(k[(i * n_groups) // n_heads], dtype=np.float64) for i in range(n_heads)])
    v_rep = np.stack([np.asarray(v[(i * n_groups) // n_heads], dtype=np.float64) for i in range(n_heads)])
    scores = np.einsum("hqd,hkd->hqk", q, k_rep) / np.sqrt(d)
    scores = np.where(np.asarray(visible, dtype=bool)[None], scores, -np.inf)
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=-1, keepdims=True)
    return np.einsum("hqk,hkd->hqd", w, v_rep)


def multi_query_attention(q, k_single, v_single, visible) -> np.ndarray:
    """Every query head reads the one shared key/value head."""
    q = np.asarray(q, dtype=np.float64)
    out = np.empty_like(q)
    for h in range(q.shape[0]):
        s = q[h] @ np.asarray(k_single, dtype=np.float64).T / np.sqrt(q.shape[-1])
        s = np.where(visible, s, -np.inf)
        w = np.exp(s - s.max(axis=-1, keepdims=True))
        out[h] = (w / w.sum(axis=-1, keepdims=True)) @ np.asarray(v_single, dtype=np.float64)
    return out


def triple_loop_matmul(a, b) -> np.ndarray:
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float64)
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for p in range(k):
                acc += float(a[i, p]) * float(b[p, j])
            out[i, j] = acc
    return out


def central_differences(f, params: dict, step: float = 1e-3, select=None) -> dict:
    """``(f(p + h) - f(p - h)) / 2h`` for every entry (or ``select(name)`` indices)."""
    grads = {}
    for name, arr in params.items():
        flat = arr.reshape(-1)
        idx = range(flat.size) if select is None else select(name, flat.size)
        g = np.full(flat.size, np.nan)
        for i in idx:
            old = flat[i]
            flat[i] = old + step
            up = f()
            flat[i] = old - step
            down = f()
            flat[i] = old
            g[i] = (up - down) / (2 * step)
        grads[name] = g.reshape(arr.shape)
    return grads


def relative_errors(analytic: dict, numeric: dict, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)`` over every entry that was checked."""
    out = []
    for name, num in numeric.items():
        a = np.asarray(analytic[name], dtype=np.float64).reshape(-1)
        n = num.reshape(-1)
        keep = ~np.isnan(n)
        denom = np.maximum(np.maximum(np.abs(a[keep]), np.abs(n[keep])), floor)
        out.append(np.abs(a[keep] - n[keep]) / denom)
    return np.concatenate(out) if out else np.zeros(0)


def all_pairs_jaccard(shingle_sets: list) -> dict:
    """Exact Jaccard for every pair ``(i, j)``, ``i < j``."""
    sets = [set(np.asarray(s).tolist()) for s in shingle_sets]
    out = {}
    for i in range(len(sets)):
        for j in range(i + 1, len(sets)):
            union = len(sets[i] | sets[j])
            out[(i, j)] = 1.0 if union == 0 else len(sets[i] & sets[j]) / union
    return out
