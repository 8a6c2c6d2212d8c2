"""Byte shingling and MinHash signatures.

Shingle hash: FNV-1a (64-bit) over the ``k`` bytes of a window, finalised
with the splitmix64 mixer.  Permutation ``i`` of a signature with base seed
``s`` is ``mix(x ^ seed_i)`` where ``seed_i = mix(s * PHI + (i + 1) * PHI2)``
and ``mix`` is the splitmix64 finaliser, a bijection on 64-bit integers.
All arithmetic is modulo 2**64.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import _backend
from .._backend import njit

MAX_HASH = np.uint64(0xFFFFFFFFFFFFFFFF)
FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)
PHI = np.uint64(0x9E3779B97F4A7C15)
PHI2 = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)


@njit
def _mix_nb(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finaliser on a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def permutation_seeds(n_perm: int, seed: int) -> np.ndarray:
    i = np.arange(1, n_perm + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        raw = np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * PHI + i * PHI2
    return mix64(raw)


@njit
def _shingle_nb(data, k):
    n = data.shape[0] - k + 1
    out = np.empty(max(n, 0), dtype=np.uint64)
    for i in range(n):
        h = FNV_OFFSET
        for c in range(k):
            h = (h ^ np.uint64(data[i + c])) * FNV_PRIME
        out[i] = _mix_nb(h)
    return np.unique(out)


def _shingle_np(data, k):
    if data.shape[0] < k:
        return np.zeros(0, dtype=np.uint64)
    win = np.lib.stride_tricks.sliding_window_view(data, k).astype(np.uint64)
    h = np.full(win.shape[0], FNV_OFFSET, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for c in range(k):
            h = (h ^ win[:, c]) * FNV_PRIME
    return np.unique(mix64(h))


def shingle(text: str | bytes, k: int = 8) -> np.ndarray:
    """Sorted unique 64-bit hashes of every ``k``-byte window of the UTF-8 text."""
    if k < 1:
        raise ValueError("shingle size k must be >= 1")
    raw = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    data = np.frombuffer(raw, dtype=np.uint8)
    if data.shape[0] < k:
        return np.zeros(0, dtype=np.uint64)
    if _backend.use_numba():
        return _shingle_nb(data, k)
    return _shingle_np(data, k)


@dataclass(frozen=True)
class MinHashSignature:
    values: np.ndarray  # uint64 [n_perm]
    seed: int

    @property
    def n_perm(self) -> int:
        return int(self.values.shape[0])

    def jaccard(self, other: "MinHashSignature") -> float:
        """Fraction of equal components: the MinHash Jaccard estimate."""
        if self.n_perm != other.n_perm or self.seed != other.seed:
            raise ValueError("signatures were built with different parameters")
        return float(np.count_nonzero(self.values == other.values)) / self.n_perm

    def __eq__(self, other):
        if not isinstance(other, MinHashSignature):
            return NotImplemented
        return self.seed == other.seed and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.seed, self.values.tobytes()))


@njit
def _minhash_nb(shingles, seeds, out):
    for i in range(seeds.shape[0]):
        best = MAX_HASH
        s = seeds[i]
        for j in range(shingles.shape[0]):
            h = _mix_nb(shingles[j] ^ s)
            if h < best:
                best = h
        out[i] = best


def _minhash_np(shingles, seeds, out, chunk=4096):
    out[:] = MAX_HASH
    for start in range(0, shingles.shape[0], chunk):
        block = shingles[start : start + chunk]
        mixed = mix64(block[None, :] ^ seeds[:, None])
        np.minimum(out, mixed.min(axis=1), out=out)


def minhash_signature(shingles, n_perm: int = 128, seed: int = 0) -> MinHashSignature:
    """Per-permutation minimum over the shingle hashes; empty input gives all ``2**64-1``."""
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    sh = np.ascontiguousarray(np.fromiter(shingles, dtype=np.uint64) if not isinstance(shingles, np.ndarray)
                              else shingles, dtype=np.uint64)
    seeds = permutation_seeds(n_perm, seed)
    out = np.full(n_perm, MAX_HASH, dtype=np.uint64)
    if sh.size:
        if _backend.use_numba():
            _minhash_nb(sh, seeds, out)
        else:
            _minhash_np(sh, seeds, out)
    return MinHashSignature(out, seed)


def true_jaccard(a, b) -> float:
    """Exact Jaccard similarity of two shingle sets (1.0 for two empty sets)."""
    a, b = set(np.asarray(a).tolist()), set(np.asarray(b).tolist())
    union = len(a | b)
    return 1.0 if union == 0 else len(a & b) / union
