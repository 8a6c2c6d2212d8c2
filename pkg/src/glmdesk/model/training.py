"""Cross-entropy on Part B, SGD/Adam, and the single training step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteLossError, ShapeError
from ..numerics import log_softmax_rows
from .config import ModelConfig
from .network import Params, backward, forward

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def loss(logits: np.ndarray, sample) -> float:
    """Mean token cross-entropy over ``sample.loss_mask`` positions."""
    if logits.shape[0] != len(sample.targets):
        raise ShapeError(f"logits have {logits.shape[0]} rows, sample has {len(sample.targets)} tokens")
    rows = np.flatnonzero(sample.loss_mask)
    if rows.size == 0:
        raise ValueError("sample has no loss positions (empty Part B)")
    logp = log_softmax_rows(logits[rows])
    return float(-logp[np.arange(rows.size), sample.targets[rows]].astype(np.float64).mean())


def _loss_grad(logits, sample, denom):
    rows = np.flatnonzero(sample.loss_mask)
    logp = log_softmax_rows(logits[rows]).astype(np.float64)
    tgt = sample.targets[rows]
    total = -float(logp[np.arange(rows.size), tgt].sum())
    d = np.zeros(logits.shape, dtype=np.float64)
    probs = np.exp(logp)
    probs[np.arange(rows.size), tgt] -= 1.0
    d[rows] = probs / denom
    return total, d.astype(logits.dtype)


def loss_and_grads(cfg: ModelConfig, params: Params, batch) -> tuple[float, Params]:
    """Mean Part-B cross-entropy over every loss token in ``batch`` and its gradient."""
    denom = sum(int(np.count_nonzero(s.loss_mask)) for s in batch)
    if denom == 0:
        raise ValueError("batch has no loss positions")
    grads = None
    total = 0.0
    for sample in batch:
        if not sample.loss_mask.any():
            continue
        logits, fc = forward(cfg, params, sample.input_ids, sample.positions, sample.mask, return_cache=True)
        part, dlogits = _loss_grad(logits, sample, denom)
        total += part
        g = backward(cfg, params, fc, dlogits)
        if grads is None:
            grads = g
        else:
            for name in grads:
                grads[name] += g[name]
    return total / denom, grads


def batch_loss(cfg: ModelConfig, params: Params, batch) -> float:
    denom = 0
    total = 0.0
    for sample in batch:
        rows = int(np.count_nonzero(sample.loss_mask))
        if not rows:
            continue
        logits = forward(cfg, params, sample.input_ids, sample.positions, sample.mask)
        total += loss(logits, sample) * rows
        denom += rows
    if denom == 0:
        raise ValueError("batch has no loss positions")
    return total / denom


@dataclass
class OptimizerState:
    kind: str = "adam"
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def _apply(params: Params, grads: Params, state: OptimizerState, lr: float) -> Params:
    state.step += 1
    if state.kind == "sgd":
        return {n: (p - lr * grads[n]).astype(p.dtype) for n, p in params.items()}
    b1, b2 = ADAM_BETA1, ADAM_BETA2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    out = {}
    for n, p in params.items():
        g = grads[n].astype(np.float64)
        m = b1 * state.m.get(n, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(n, 0.0) + (1 - b2) * g * g
        state.m[n], state.v[n] = m, v
        update = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        out[n] = (p - lr * update).astype(p.dtype)
    return out


def train_step(cfg: ModelConfig, params: Params, batch, state: OptimizerState, lr: float):
    """One optimizer step; returns ``(new_params, loss)``.

    The incoming ``params`` dict is not modified.  A non-finite loss or
    gradient raises :class:`NonFiniteLossError` before anything is updated.
    """
    value, grads = loss_and_grads(cfg, params, batch)
    if not np.isfinite(value):
        raise NonFiniteLossError(f"loss is {value} at optimizer step {state.step + 1}")
    bad = [n for n, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NonFiniteLossError(
            f"non-finite gradients at optimizer step {state.step + 1} (loss {value:.6g}) in: {', '.join(bad[:5])}"
        )
    return _apply(params, grads, state, lr), value
