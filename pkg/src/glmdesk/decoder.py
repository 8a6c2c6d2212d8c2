"""Incremental decoding with a per-layer KV cache, and token sampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention import MaskSpec
from .errors import CacheOverflowError
from .model.network import Model, forward
from .numerics import make_rng, softmax_rows


class KVCache:
    """Append-only post-RoPE keys/values for every layer.

    Storage is preallocated to ``capacity``; ``length`` is shared by all
    layers and only moves forward.
    """

    def __init__(self, n_layers: int, n_kv_groups: int, head_dim: int, capacity: int, dtype=np.float32):
        if capacity < 1:
            raise ValueError("cache capacity must be positive")
        self.capacity = capacity
        self.length = 0
        self._pending = 0
        shape = (n_layers, n_kv_groups, capacity, head_dim)
        self._k = np.zeros(shape, dtype=dtype)
        self._v = np.zeros(shape, dtype=dtype)

    @classmethod
    def for_model(cls, model: Model, capacity: int | None = None) -> "KVCache":
        cfg = model.cfg
        cap = cfg.max_positions if capacity is None else capacity
        return cls(cfg.n_layers, cfg.n_kv_groups, cfg.head_dim, cap, dtype=model.dtype)

    @property
    def n_layers(self) -> int:
        return self._k.shape[0]

    def cached_k(self, layer: int) -> np.ndarray:
        return self._k[layer, :, : self.length]

    def cached_v(self, layer: int) -> np.ndarray:
        return self._v[layer, :, : self.length]

    def allocated_elements(self) -> int:
        return self._k.size + self._v.size

    def reserve(self, n: int) -> None:
        if self.length + n > self.capacity:
            raise CacheOverflowError(
                f"KV cache overflow: {self.length} cached + {n} new > capacity {self.capacity}"
            )
        self._pending = n

    def write(self, layer: int, k: np.ndarray, v: np.ndarray):
        n = k.shape[1]
        if n != self._pending:
            raise ValueError("write size does not match the reserved size")
        end = self.length + n
        self._k[layer, :, self.length : end] = k
        self._v[layer, :, self.length : end] = v
        return self._k[layer, :, :end], self._v[layer, :, :end]

    def commit(self, n: int) -> None:
        self.length += n
        self._pending = 0

    def snapshot(self) -> tuple[np.ndarray, np.ndarray]:
        return self._k[:, :, : self.length].copy(), self._v[:, :, : self.length].copy()


def _default_positions(start: int, n: int) -> np.ndarray:
    return np.stack([np.arange(start, start + n), np.zeros(n, dtype=np.int64)], axis=1)


def prefill(model: Model, tokens, cache: KVCache, positions=None, *, bidirectional: bool = False, **kw):
    """Run the prompt through the model, filling ``cache``; returns last-position logits.

    The prompt attends causally, or fully within itself with
    ``bidirectional=True`` (the PrefixLM treatment of Part A).
    """
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.size == 0:
        raise ValueError("empty input")
    if cache.length != 0:
        raise ValueError("prefill needs an empty cache")
    if tokens.size > cache.capacity:
        raise CacheOverflowError(f"prompt of {tokens.size} tokens exceeds cache capacity {cache.capacity}")
    pos = _default_positions(0, tokens.size) if positions is None else positions
    mask = MaskSpec.prefix(tokens.size) if bidirectional else MaskSpec.causal()
    logits = forward(model.cfg, model.params, tokens, pos, mask, kv_cache=cache, **kw)
    return logits[-1]


def decode_step(model: Model, token: int, cache: KVCache, position=None, **kw):
    """Append one token and return its next-token logits."""
    if cache.length >= cache.capacity:
        raise CacheOverflowError(f"KV cache capacity {cache.capacity} exhausted")
    pos = _default_positions(cache.length, 1) if position is None else np.asarray(position).reshape(1, 2)
    logits = forward(model.cfg, model.params, [int(token)], pos, MaskSpec.causal(), kv_cache=cache, **kw)
    return logits[0]


@dataclass(frozen=True)
class Temperature:
    t: float
    seed: int = 0

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError(f"temperature must be > 0, got {self.t}")


GREEDY = "greedy"


def sample(logits, strategy=GREEDY, rng: np.random.Generator | None = None) -> int:
    """Greedy (lowest id wins ties) or temperature sampling.

    For :class:`Temperature`, pass ``rng`` to continue one stream across a
    generation; otherwise a generator is seeded from ``strategy.seed``.
    """
    logits = np.asarray(logits, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    if strategy == GREEDY:
        return int(np.argmax(logits))
    if not isinstance(strategy, Temperature):
        raise ValueError(f"unknown sampling strategy {strategy!r}")
    rng = make_rng(strategy.seed) if rng is None else rng
    probs = softmax_rows((logits / strategy.t)[None, :])[0]
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return int(min(np.searchsorted(cdf, u, side="right"), logits.size - 1))


def generate(
    model: Model,
    prompt,
    max_new_tokens: int,
    strategy=GREEDY,
    *,
    infill: bool = True,
    stop_at_eop: bool = True,
):
    """Generate tokens after ``prompt``.

    With ``infill`` (the default) the prompt becomes Part A followed by a
    MASK; decoding starts from SOP and fills that blank, positions
    ``(mask_slot, 1..)``, until EOP.  Without it, plain causal continuation.
    """
    cfg = model.cfg
    prompt = [int(t) for t in prompt]
    rng = make_rng(strategy.seed) if isinstance(strategy, Temperature) else None
    if infill:
        part_a = prompt + [cfg.mask_id]
        slot = len(part_a) - 1
        cache = KVCache.for_model(model, len(part_a) + max_new_tokens + 1)
        prefill(model, part_a, cache, bidirectional=True)
        logits = decode_step(model, cfg.sop_id, cache, (slot, 1))
    else:
        cache = KVCache.for_model(model, len(prompt) + max_new_tokens)
        logits = prefill(model, prompt, cache)
    out: list[int] = []
    for step in range(max_new_tokens):
        tok = sample(logits, strategy, rng)
        if infill and stop_at_eop and tok == cfg.eop_id:
            break
        out.append(tok)
        if step + 1 == max_new_tokens:
            break
        pos = (slot, step + 2) if infill else None
        logits = decode_step(model, tok, cache, pos)
    return out
