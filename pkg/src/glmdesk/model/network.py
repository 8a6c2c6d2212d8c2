"""GLM block stack: parameters, forward pass and exact reverse pass.

Each block is pre-norm::

    x = x + Wo · attn(rope2d(h Wq + bq), rope2d(h Wk + bk), h Wv + bv),  h = rms(x)
    x = x + swiglu(rms(x))

followed by a final RMSNorm and the output projection (tied to the
embedding table unless ``cfg.tie_embeddings`` is False).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..attention import MaskSpec, attention_backward, attention_naive, attention_tiled
from ..errors import ShapeError
from ..layers import (
    LinearLayer,
    RMSNormLayer,
    SwiGLUFFN,
    init_std,
    linear,
    linear_backward,
    rms_norm,
    rms_norm_backward,
    swiglu_ffn,
    swiglu_ffn_backward,
)
from ..numerics import Tensor, check_finite, make_rng, matmul
from ..position import rope_rotate_2d
from .config import ModelConfig

Params = dict


def layer_names(i: int) -> dict[str, str]:
    p = f"layers.{i}."
    return {
        k: p + k
        for k in ("attn_norm", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "ffn_norm", "w_gate", "w_up", "w_down")
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d, hd, f = cfg.hidden, cfg.head_dim, cfg.d_ffn
    q_out, kv_out = cfg.n_heads * hd, cfg.n_kv_groups * hd
    shapes = {"embed": (cfg.vocab_size, d)}
    for i in range(cfg.n_layers):
        n = layer_names(i)
        shapes[n["attn_norm"]] = (d,)
        shapes[n["wq"]] = (d, q_out)
        shapes[n["wk"]] = (d, kv_out)
        shapes[n["wv"]] = (d, kv_out)
        if cfg.qkv_bias:
            shapes[n["bq"]] = (q_out,)
            shapes[n["bk"]] = (kv_out,)
            shapes[n["bv"]] = (kv_out,)
        shapes[n["wo"]] = (q_out, d)
        shapes[n["ffn_norm"]] = (d,)
        shapes[n["w_gate"]] = (d, f)
        shapes[n["w_up"]] = (d, f)
        shapes[n["w_down"]] = (f, d)
    shapes["final_norm"] = (d,)
    if not cfg.tie_embeddings:
        shapes["lm_head"] = (d, cfg.vocab_size)
    return shapes


def init_params(cfg: ModelConfig, seed=0, dtype=np.float32) -> Params:
    """Seeded normal init (std 0.02; residual outputs scaled by 1/sqrt(2L))."""
    rng = make_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("norm"):
            arr = np.ones(shape)
        elif leaf in ("bq", "bk", "bv"):
            arr = np.zeros(shape)
        else:
            std = init_std(cfg.n_layers, residual=leaf in ("wo", "w_down"))
            arr = rng.normal(0.0, std, size=shape)
        params[name] = arr.astype(dtype)
    return params


def output_weight(cfg: ModelConfig, params: Params) -> Tensor:
    return params["embed"].T if cfg.tie_embeddings else params["lm_head"]


@dataclass
class _Block:
    attn_norm: RMSNormLayer
    q: LinearLayer
    k: LinearLayer
    v: LinearLayer
    o: LinearLayer
    ffn_norm: RMSNormLayer
    ffn: SwiGLUFFN


def _block(cfg: ModelConfig, params: Params, i: int) -> _Block:
    n = layer_names(i)
    return _Block(
        attn_norm=RMSNormLayer(params[n["attn_norm"]], cfg.eps),
        q=LinearLayer(params[n["wq"]], params.get(n["bq"]), role="q"),
        k=LinearLayer(params[n["wk"]], params.get(n["bk"]), role="k"),
        v=LinearLayer(params[n["wv"]], params.get(n["bv"]), role="v"),
        o=LinearLayer(params[n["wo"]], role="o"),
        ffn_norm=RMSNormLayer(params[n["ffn_norm"]], cfg.eps),
        ffn=SwiGLUFFN(params[n["w_gate"]], params[n["w_up"]], params[n["w_down"]]),
    )


def _heads(x: Tensor, n: int, hd: int) -> Tensor:
    # [seq, n*hd] -> [n, seq, hd]
    return np.ascontiguousarray(x.reshape(x.shape[0], n, hd).transpose(1, 0, 2))


def _merge_heads(x: Tensor) -> Tensor:
    return np.ascontiguousarray(x.transpose(1, 0, 2).reshape(x.shape[1], -1))


def _check_inputs(cfg: ModelConfig, input_ids, positions):
    ids = np.asarray(input_ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise ShapeError("input_ids must be a non-empty 1-D sequence")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValueError(f"token id out of range [0, {cfg.vocab_size})")
    if positions is None:
        positions = np.stack([np.arange(ids.size), np.zeros(ids.size, dtype=np.int64)], axis=1)
    pos = np.asarray(positions, dtype=np.int64).reshape(-1, 2)
    if pos.shape[0] != ids.size:
        raise ShapeError(f"{pos.shape[0]} positions for {ids.size} tokens")
    return ids, pos


@dataclass
class ForwardCache:
    ids: np.ndarray
    positions: np.ndarray
    mask: MaskSpec
    layers: list = field(default_factory=list)
    final_in: Tensor | None = None
    final_out: Tensor | None = None


def forward(
    cfg: ModelConfig,
    params: Params,
    input_ids,
    positions=None,
    mask: MaskSpec | None = None,
    *,
    kv_cache=None,
    attention: str = "naive",
    tile_size: int = 16,
    return_cache: bool = False,
    return_hidden: bool = False,
):
    """Logits ``[seq, vocab]`` for ``input_ids``.

    ``positions`` is ``[seq, 2]`` (defaults to ``(i, 0)``); ``mask`` defaults
    to causal.  With ``kv_cache`` the tokens are appended to the cache and
    attend over everything cached so far.  ``return_hidden`` adds the list of
    residual-stream states (embedding output, then after every block).
    """
    ids, pos = _check_inputs(cfg, input_ids, positions)
    mask = MaskSpec.causal() if mask is None else mask
    seq = ids.size
    offset = 0 if kv_cache is None else kv_cache.length
    if offset + seq > cfg.max_positions:
        raise ValueError(f"sequence length {offset + seq} exceeds max_positions {cfg.max_positions}")
    if kv_cache is not None:
        kv_cache.reserve(seq)
    if attention not in ("naive", "tiled"):
        raise ValueError(f"unknown attention path {attention!r}")
    if return_cache and (attention != "naive" or kv_cache is not None):
        raise ValueError("backward caches need naive attention without a KV cache")

    layout, rope, hd = cfg.layout, cfg.rope, cfg.head_dim
    x = params["embed"][ids]
    fc = ForwardCache(ids, pos, mask) if return_cache else None
    hidden = [x] if return_hidden else None

    for i in range(cfg.n_layers):
        blk = _block(cfg, params, i)
        h1 = rms_norm(x, blk.attn_norm)
        q = rope_rotate_2d(_heads(linear(h1, blk.q), cfg.n_heads, hd), pos, rope)
        k = rope_rotate_2d(_heads(linear(h1, blk.k), cfg.n_kv_groups, hd), pos, rope)
        v = _heads(linear(h1, blk.v), cfg.n_kv_groups, hd)
        if kv_cache is not None:
            k, v = kv_cache.write(i, k, v)
        probs = None
        if attention == "tiled":
            a = attention_tiled(q, k, v, layout, mask, tile_size, q_offset=offset)
        elif return_cache:
            a, probs = attention_naive(q, k, v, layout, mask, q_offset=offset, return_probs=True)
        else:
            a = attention_naive(q, k, v, layout, mask, q_offset=offset)
        a_flat = _merge_heads(a)
        x_mid = x + linear(a_flat, blk.o)
        h2 = rms_norm(x_mid, blk.ffn_norm)
        f, ffn_cache = swiglu_ffn(h2, blk.ffn, return_cache=True)
        x_out = x_mid + f
        if fc is not None:
            fc.layers.append(dict(x=x, h1=h1, q=q, k=k, v=v, probs=probs, a_flat=a_flat,
                                  x_mid=x_mid, h2=h2, ffn=ffn_cache))
        x = x_out
        if hidden is not None:
            hidden.append(x)

    if kv_cache is not None:
        kv_cache.commit(seq)
    final = rms_norm(x, RMSNormLayer(params["final_norm"], cfg.eps))
    logits = check_finite(matmul(final, output_weight(cfg, params)), "logits")
    if fc is not None:
        fc.final_in, fc.final_out = x, final
    result = [logits]
    if return_cache:
        result.append(fc)
    if return_hidden:
        result.append(hidden)
    return result[0] if len(result) == 1 else tuple(result)


def backward(cfg: ModelConfig, params: Params, fc: ForwardCache, dlogits: Tensor) -> Params:
    """Gradients of ``sum(dlogits * logits)`` w.r.t. every parameter."""
    grads = {name: np.zeros_like(p) for name, p in params.items()}
    layout, rope, hd = cfg.layout, cfg.rope, cfg.head_dim
    w_out = output_weight(cfg, params)
    dlogits = dlogits.astype(w_out.dtype, copy=False)

    dw_out = matmul(fc.final_out.T, dlogits)
    if cfg.tie_embeddings:
        grads["embed"] += dw_out.T
    else:
        grads["lm_head"] += dw_out
    dfinal = matmul(dlogits, w_out.T)
    dx, dg = rms_norm_backward(fc.final_in, RMSNormLayer(params["final_norm"], cfg.eps), dfinal)
    grads["final_norm"] += dg

    for i in reversed(range(cfg.n_layers)):
        blk = _block(cfg, params, i)
        n = layer_names(i)
        c = fc.layers[i]

        # feed-forward residual branch
        dh2, dwg, dwu, dwd = swiglu_ffn_backward(c["h2"], blk.ffn, c["ffn"], dx)
        grads[n["w_gate"]] += dwg
        grads[n["w_up"]] += dwu
        grads[n["w_down"]] += dwd
        dnorm, dg = rms_norm_backward(c["x_mid"], blk.ffn_norm, dh2)
        grads[n["ffn_norm"]] += dg
        dx_mid = dx + dnorm

        # attention residual branch
        da_flat, dwo, _ = linear_backward(c["a_flat"], blk.o, dx_mid)
        grads[n["wo"]] += dwo
        da = _heads(da_flat, cfg.n_heads, hd)
        dq, dk, dv = attention_backward(c["q"], c["k"], c["v"], layout, c["probs"], da)
        dq = _merge_heads(rope_rotate_2d(dq, fc.positions, rope, inverse=True))
        dk = _merge_heads(rope_rotate_2d(dk, fc.positions, rope, inverse=True))
        dv = _merge_heads(dv)
        dh1 = np.zeros_like(c["h1"])
        for proj, dy, wname, bname in ((blk.q, dq, "wq", "bq"), (blk.k, dk, "wk", "bk"), (blk.v, dv, "wv", "bv")):
            dxp, dw, db = linear_backward(c["h1"], proj, dy)
            dh1 += dxp
            grads[n[wname]] += dw
            if db is not None:
                grads[n[bname]] += db
        dnorm, dg = rms_norm_backward(c["x"], blk.attn_norm, dh1)
        grads[n["attn_norm"]] += dg
        dx = dx_mid + dnorm

    np.add.at(grads["embed"], fc.ids, dx)
    return grads


@dataclass
class Model:
    """A config with its parameters; the unit the decoder and CLI pass around."""

    cfg: ModelConfig
    params: Params

    @classmethod
    def init(cls, cfg: ModelConfig, seed=0, dtype=np.float32) -> "Model":
        return cls(cfg, init_params(cfg, seed, dtype))

    def forward(self, input_ids, positions=None, mask=None, **kw):
        return forward(self.cfg, self.params, input_ids, positions, mask, **kw)

    @property
    def dtype(self):
        return self.params["embed"].dtype

