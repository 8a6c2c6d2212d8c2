"""Prefill/decode throughput for the numba and numpy kernel backends."""

from __future__ import annotations

import time

import numpy as np

from . import _backend
from .decoder import KVCache, decode_step, prefill
from .model import Model, ModelConfig
from .numerics import make_rng


def _tiny_model(prompt_len: int, decode_tokens: int, seed: int) -> Model:
    cfg = ModelConfig(n_layers=4, hidden=64, n_heads=4, n_kv_groups=2, vocab_size=512,
                      max_positions=prompt_len + decode_tokens + 1)
    return Model.init(cfg, seed)


def _run_once(model: Model, prompt, decode_tokens: int):
    cache = KVCache.for_model(model, len(prompt) + decode_tokens)
    t0 = time.perf_counter()
    logits = prefill(model, prompt, cache)
    t1 = time.perf_counter()
    for _ in range(decode_tokens):
        logits = decode_step(model, int(np.argmax(logits)), cache)
    t2 = time.perf_counter()
    return t1 - t0, t2 - t1


def bench_decode(checkpoint=None, prompt_len: int = 64, decode_tokens: int = 32, repeats: int = 3, seed: int = 0):
    """Best-of-``repeats`` tokens/s per backend, after one warm-up run each."""
    if checkpoint:
        from .model.checkpoint import load

        model = Model(*load(checkpoint))
        prompt_len = min(prompt_len, model.cfg.max_positions - decode_tokens)
    else:
        model = _tiny_model(prompt_len, decode_tokens, seed)
    if prompt_len < 1:
        raise ValueError("model context is too short for the requested decode length")
    prompt = make_rng(seed).integers(0, model.cfg.vocab_size - 4, size=prompt_len).tolist()
    backends = [b for b in _backend.BACKENDS if b != "numba" or _backend.HAS_NUMBA]
    rows = []
    for name in backends:
        with _backend.use_backend(name):
            _run_once(model, prompt, decode_tokens)
            runs = [_run_once(model, prompt, decode_tokens) for _ in range(max(1, repeats))]
        pre = min(r[0] for r in runs)
        dec = min(r[1] for r in runs)
        rows.append({
            "backend": name,
            "prompt_tokens": prompt_len,
            "decode_tokens": decode_tokens,
            "prefill_tok_s": prompt_len / pre,
            "decode_tok_s": decode_tokens / dec if decode_tokens else float("nan"),
        })
    return rows


def format_table(rows) -> str:
    lines = [f"{'backend':<8} {'prefill tok/s':>14} {'decode tok/s':>13}"]
    for r in rows:
        lines.append(f"{r['backend']:<8} {r['prefill_tok_s']:>14.1f} {r['decode_tok_s']:>13.1f}")
    return "\n".join(lines) + "\n"
