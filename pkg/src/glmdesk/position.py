"""Rotary position embeddings: 1-D, two-dimensional, and interpolated.

Channels are rotated in adjacent pairs ``(2i, 2i+1)``.  In the 2-D form the
first half of the head dimension encodes the position in the corrupted
sequence and the second half the position inside a regenerated span.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ShapeError
from .numerics import Tensor


@dataclass(frozen=True)
class RopeConfig:
    head_dim: int
    base: float = 10000.0
    scale: float = 1.0

    def __post_init__(self):
        if self.head_dim < 2 or self.head_dim % 2:
            raise ValueError(f"rope head_dim must be even and positive, got {self.head_dim}")
        if self.base <= 0:
            raise ValueError("rope base must be positive")
        if self.scale < 1:
            raise ValueError("rope scale must be >= 1")

    def inv_freq(self, dim: int | None = None) -> np.ndarray:
        dim = self.head_dim if dim is None else dim
        return self.base ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)


class Position2D(NamedTuple):
    pos_a: int
    pos_b: int = 0


def _rotate(x: Tensor, positions: np.ndarray, inv_freq: np.ndarray, scale: float, sign: float):
    d = x.shape[-1]
    if d % 2:
        raise ShapeError(f"rope needs an even channel count, got {d}")
    seq = x.shape[-2]
    if positions.shape != (seq,):
        raise ShapeError(f"got {positions.shape[0]} positions for sequence length {seq}")
    angle = (positions.astype(np.float64) / scale)[:, None] * inv_freq[None, :]
    cos = np.cos(angle)
    sin = sign * np.sin(angle)
    x0 = x[..., 0::2].astype(np.float64)
    x1 = x[..., 1::2].astype(np.float64)
    out = np.empty(x.shape, dtype=np.float64)
    out[..., 0::2] = x0 * cos - x1 * sin
    out[..., 1::2] = x0 * sin + x1 * cos
    return out.astype(x.dtype, copy=False)


def _as_positions(positions) -> np.ndarray:
    pos = np.asarray(positions)
    if pos.size and pos.min() < 0:
        raise ValueError("positions must be non-negative")
    return pos


def rope_rotate(x: Tensor, positions: Sequence[int], cfg: RopeConfig, *, inverse: bool = False) -> Tensor:
    """Rotate ``x[..., seq, head_dim]`` by per-row positions.

    Pair ``(2i, 2i+1)`` at position ``m`` turns by ``(m / scale) * base**(-2i/head_dim)``;
    ``inverse=True`` applies the transpose rotation (used by backprop).
    """
    if x.shape[-1] != cfg.head_dim:
        raise ShapeError(f"rope: last dim {x.shape[-1]} != head_dim {cfg.head_dim}")
    pos = _as_positions(positions)
    return _rotate(x, pos, cfg.inv_freq(), cfg.scale, -1.0 if inverse else 1.0)


def rope_rotate_2d(x: Tensor, positions, cfg: RopeConfig, *, inverse: bool = False) -> Tensor:
    """2-D RoPE: first half turned by ``pos_a``, second half by ``pos_b``.

    ``positions`` is a sequence of :class:`Position2D` or an int array of
    shape ``[seq, 2]``.
    """
    d = cfg.head_dim
    if d % 4:
        raise ShapeError(f"2-D rope needs head_dim divisible by 4, got {d}")
    if x.shape[-1] != d:
        raise ShapeError(f"rope: last dim {x.shape[-1]} != head_dim {d}")
    pos = _as_positions(np.asarray(positions, dtype=np.int64).reshape(-1, 2))
    half = d // 2
    inv = cfg.inv_freq(half)
    sign = -1.0 if inverse else 1.0
    out = np.empty_like(x)
    out[..., :half] = _rotate(x[..., :half], pos[:, 0], inv, cfg.scale, sign)
    out[..., half:] = _rotate(x[..., half:], pos[:, 1], inv, cfg.scale, sign)
    return out


def interpolate_positions(cfg: RopeConfig, trained_ctx: int, target_ctx: int) -> RopeConfig:
    """Linear position interpolation: squeeze ``target_ctx`` positions into ``trained_ctx``."""
    if trained_ctx < 1 or target_ctx < 1:
        raise ValueError("context lengths must be positive")
    if target_ctx < trained_ctx:
        raise ValueError(f"target context {target_ctx} is shorter than trained context {trained_ctx}")
    return dataclasses.replace(cfg, scale=target_ctx / trained_ctx)


def effective_position(position: float, cfg: RopeConfig) -> float:
    return position / cfg.scale
