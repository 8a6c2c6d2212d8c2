"""Transformer sub-layers: RMSNorm, SwiGLU feed-forward and linear projections.

Every forward function has a matching ``*_backward`` that returns exact
input and parameter gradients; the model's reverse pass is composed from
these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BiasPolicyError, ShapeError
from .numerics import Tensor, matmul, sigmoid

# Only attention query/key/value projections may carry a bias.
BIAS_ROLES = frozenset({"q", "k", "v"})

FFN_RATIO = 10 / 3
FFN_GRANULE = 32
DEFAULT_EPS = 1e-5


def ffn_size(hidden: int, granule: int = FFN_GRANULE) -> int:
    """Feed-forward width: ``10/3 * hidden`` rounded up to ``granule``."""
    if hidden < 1 or granule < 1:
        raise ValueError("hidden and granule must be positive")
    # exact integer form of ceil(hidden * 10 / 3 / granule) * granule
    return -(-hidden * 10 // (3 * granule)) * granule


@dataclass
class LinearLayer:
    weight: Tensor
    bias: Tensor | None = None
    role: str = "other"

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise ShapeError(f"linear weight must be 2-D, got {self.weight.shape}")
        if self.bias is not None:
            if self.role not in BIAS_ROLES:
                raise BiasPolicyError(
                    f"bias not allowed on {self.role!r} projection; only Q, K, V carry biases"
                )
            if self.bias.shape != (self.weight.shape[1],):
                raise ShapeError(
                    f"bias shape {self.bias.shape} does not match weight {self.weight.shape}"
                )

    @property
    def has_bias(self) -> bool:
        return self.bias is not None


def linear(x: Tensor, layer: LinearLayer) -> Tensor:
    y = matmul(x, layer.weight)
    if layer.bias is not None:
        y = y + layer.bias
    return y


def linear_backward(x: Tensor, layer: LinearLayer, dy: Tensor):
    """Returns ``(dx, dweight, dbias)``; ``dbias`` is None without a bias."""
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dx = matmul(dy, layer.weight.T)
    dw = matmul(x2.T, dy2)
    db = dy2.sum(axis=0) if layer.bias is not None else None
    return dx, dw, db


@dataclass
class RMSNormLayer:
    gamma: Tensor
    eps: float = DEFAULT_EPS

    def __post_init__(self):
        if not self.eps >= 0:
            raise ValueError("eps must be non-negative")


def _inv_rms(x: Tensor, eps: float) -> Tensor:
    ms = np.mean(np.square(x, dtype=np.float64), axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        r = 1.0 / np.sqrt(ms + eps)
    # an all-zero slice at eps=0 normalises to zero rather than NaN
    return np.where(np.isfinite(r), r, 0.0)


def rms_norm(x: Tensor, layer: RMSNormLayer) -> Tensor:
    """``x / sqrt(mean(x**2) + eps) * gamma`` over the last dimension."""
    if x.shape[-1] != layer.gamma.shape[-1]:
        raise ShapeError(f"rms_norm: last dim {x.shape[-1]} != gamma size {layer.gamma.shape[-1]}")
    r = _inv_rms(x, layer.eps)
    return (x * r * layer.gamma).astype(x.dtype, copy=False)


def rms_norm_backward(x: Tensor, layer: RMSNormLayer, dy: Tensor):
    """Returns ``(dx, dgamma)``."""
    r = _inv_rms(x, layer.eps).astype(x.dtype)
    xhat = x * r
    dgamma = (dy * xhat).reshape(-1, x.shape[-1]).sum(axis=0)
    u = dy * layer.gamma
    d = x.shape[-1]
    dx = r * u - xhat * (r * np.sum(u * xhat, axis=-1, keepdims=True) / d)
    return dx.astype(x.dtype, copy=False), dgamma


@dataclass
class SwiGLUFFN:
    w_gate: Tensor
    w_up: Tensor
    w_down: Tensor

    def __post_init__(self):
        d, f = self.w_gate.shape
        if self.w_up.shape != (d, f) or self.w_down.shape != (f, d):
            raise ShapeError(
                f"inconsistent SwiGLU shapes {self.w_gate.shape}, {self.w_up.shape}, {self.w_down.shape}"
            )


def swiglu_ffn(x: Tensor, ffn: SwiGLUFFN, *, return_cache: bool = False):
    if x.shape[-1] != ffn.w_gate.shape[0]:
        raise ShapeError(f"swiglu_ffn: input dim {x.shape[-1]} != {ffn.w_gate.shape[0]}")
    gate = matmul(x, ffn.w_gate)
    up = matmul(x, ffn.w_up)
    sig = sigmoid(gate)
    hidden = gate * sig * up
    y = matmul(hidden, ffn.w_down)
    if return_cache:
        return y, (gate, up, sig, hidden)
    return y


def swiglu_ffn_backward(x: Tensor, ffn: SwiGLUFFN, cache, dy: Tensor):
    """Returns ``(dx, dw_gate, dw_up, dw_down)``."""
    gate, up, sig, hidden = cache
    d = x.shape[-1]
    x2 = x.reshape(-1, d)
    dy2 = dy.reshape(-1, d)
    dw_down = matmul(hidden.reshape(-1, hidden.shape[-1]).T, dy2)
    dhidden = matmul(dy, ffn.w_down.T)
    silu_gate = gate * sig
    dup = dhidden * silu_gate
    dgate = dhidden * up * (sig * (1.0 + gate * (1.0 - sig)))
    f = gate.shape[-1]
    dw_gate = matmul(x2.T, dgate.reshape(-1, f))
    dw_up = matmul(x2.T, dup.reshape(-1, f))
    dx = matmul(dgate, ffn.w_gate.T) + matmul(dup, ffn.w_up.T)
    return dx, dw_gate, dw_up, dw_down


def init_std(n_layers: int, base: float = 0.02, residual: bool = False) -> float:
    """Normal init std; residual output projections are scaled by 1/sqrt(2L)."""
    return base / math.sqrt(2 * n_layers) if residual else base
