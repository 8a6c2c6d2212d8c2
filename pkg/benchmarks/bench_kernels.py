"""Numba vs pure-numpy timings for the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeats 5] [--json out.json]

Each kernel runs once per backend to warm up (and JIT-compile), then the
best of ``--repeats`` timings is reported together with the speedup and a
check that both backends returned the same result.
"""

import argparse
import json
import time

import numpy as np

from glmdesk import _backend
from glmdesk.attention import HeadLayout, MaskSpec, attention_tiled
from glmdesk.datapipe.minhash import minhash_signature, shingle
from glmdesk.numerics import make_rng, matmul, softmax_rows
from glmdesk.tokenizer import bpe_train, encode


def _cases(rng):
    a = rng.standard_normal((128, 256)).astype(np.float32)
    b = rng.standard_normal((256, 128)).astype(np.float32)
    scores = rng.standard_normal((512, 512)).astype(np.float32)
    layout = HeadLayout(8, 2, 32)
    q = rng.standard_normal((8, 128, 32)).astype(np.float32)
    k = rng.standard_normal((2, 128, 32)).astype(np.float32)
    v = rng.standard_normal((2, 128, 32)).astype(np.float32)
    text = " ".join("w%d" % i for i in rng.integers(0, 400, size=3000))
    sh = shingle(text, 8)
    corpus = text.encode()[:6000]
    vocab = bpe_train(corpus, 400)
    return {
        "matmul 128x256x128": lambda: matmul(a, b),
        "softmax 512x512": lambda: softmax_rows(scores),
        "tiled attention s=128": lambda: attention_tiled(q, k, v, layout, MaskSpec.causal(), 16),
        "shingle 8-byte": lambda: shingle(text, 8),
        "minhash 128 perms": lambda: minhash_signature(sh, 128, 0).values,
        "bpe_train 6kB -> 400": lambda: np.array([m for pair in bpe_train(corpus, 400).merges for m in pair]),
        "bpe encode 6kB": lambda: np.array(encode(vocab, corpus)),
    }


def _best(fn, repeats):
    best = float("inf")
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args()
    if not _backend.HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    cases = _cases(make_rng(args.seed))
    rows = []
    print(f"{'kernel':<24} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}  same")
    for name, fn in cases.items():
        timings, outs = {}, {}
        for backend in ("numba", "numpy"):
            with _backend.use_backend(backend):
                fn()
                timings[backend], outs[backend] = _best(fn, args.repeats)
        same = bool(np.array_equal(np.asarray(outs["numba"]), np.asarray(outs["numpy"])))
        speedup = timings["numpy"] / timings["numba"]
        rows.append({"kernel": name, "numba_s": timings["numba"], "numpy_s": timings["numpy"],
                     "speedup": speedup, "identical": same})
        print(f"{name:<24} {timings['numba'] * 1e3:>10.3f} {timings['numpy'] * 1e3:>10.3f} {speedup:>7.1f}x  {same}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
