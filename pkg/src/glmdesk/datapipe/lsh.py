"""Exact plus MinHash-LSH near-duplicate removal over a document corpus."""

from __future__ import annotations

import hashlib
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .documents import Document
from .minhash import minhash_signature, shingle

DEFAULT_N_PERM = 128
DEFAULT_BANDS = 16
DEFAULT_ROWS = 8
DEFAULT_SHINGLE = 8


class _UnionFind:
    """Union-find whose root is always the smallest document id in the set."""

    def __init__(self, ids):
        self.parent = {i: i for i in ids}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            lo, hi = (ra, rb) if ra < rb else (rb, ra)
            self.parent[hi] = lo


@dataclass
class DedupResult:
    kept: list
    report: list = field(default_factory=list)  # dicts: kept_id, dropped_id, estimated_jaccard
    candidate_pairs: int = 0
    exact_duplicates: int = 0

    @property
    def dropped_ids(self) -> set:
        return {r["dropped_id"] for r in self.report}


def _text_digest(text: str) -> bytes:
    return hashlib.blake2b(text.encode("utf-8"), digest_size=16).digest()


def signatures(docs, n_perm, seed, shingle_k, threads: int = 1):
    def one(doc):
        return minhash_signature(shingle(doc.text, shingle_k), n_perm, seed)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, docs))
    return [one(d) for d in docs]


def lsh_dedup(
    corpus: list[Document],
    n_perm: int = DEFAULT_N_PERM,
    bands: int = DEFAULT_BANDS,
    rows: int = DEFAULT_ROWS,
    jaccard_threshold: float = 0.8,
    *,
    seed: int = 0,
    shingle_k: int = DEFAULT_SHINGLE,
    threads: int = 1,
) -> DedupResult:
    """Remove exact duplicates, then near duplicates found by banded MinHash.

    Documents sharing one full band are candidates; candidates whose
    estimated Jaccard reaches ``jaccard_threshold`` are joined into clusters.
    Each cluster keeps the document with the lowest id (string order); the
    survivors keep their input order.
    """
    if bands * rows != n_perm:
        raise ValueError(f"bands * rows must equal n_perm ({bands} * {rows} != {n_perm})")
    if not 0.0 <= jaccard_threshold <= 1.0:
        raise ValueError("jaccard_threshold must lie in [0, 1]")

    ids = [d.id for d in corpus]
    uf = _UnionFind(ids)

    # exact duplicates first: identical texts collapse onto their lowest id
    groups: dict[bytes, list[str]] = defaultdict(list)
    digest_of = {}
    for doc in corpus:
        dg = _text_digest(doc.text)
        digest_of[doc.id] = dg
        groups[dg].append(doc.id)
    rep_of = {}
    n_exact = 0
    for dg, members in groups.items():
        rep = min(members)
        rep_of[dg] = rep
        for other in members:
            if other != rep:
                uf.union(rep, other)
                n_exact += 1
    reps = [d for d in corpus if rep_of[digest_of[d.id]] == d.id]

    sigs = dict(zip((d.id for d in reps), signatures(reps, n_perm, seed, shingle_k, threads)))
    buckets: dict = defaultdict(list)
    for doc in reps:
        vals = sigs[doc.id].values
        for b in range(bands):
            buckets[(b, vals[b * rows : (b + 1) * rows].tobytes())].append(doc.id)

    seen_pairs = set()
    for members in buckets.values():
        if len(members) < 2:
            continue
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                pair = (members[i], members[j]) if members[i] < members[j] else (members[j], members[i])
                if pair in seen_pairs:
                    continue
                seen_pairs.add(pair)
                if sigs[pair[0]].jaccard(sigs[pair[1]]) >= jaccard_threshold:
                    uf.union(*pair)

    kept, report = [], []
    for doc in corpus:
        root = uf.find(doc.id)
        if root == doc.id:
            kept.append(doc)
            continue
        rep = rep_of[digest_of[doc.id]]
        est = 1.0 if rep == root else sigs[rep].jaccard(sigs[root])
        report.append({"kept_id": root, "dropped_id": doc.id, "estimated_jaccard": est})
    return DedupResult(kept, report, len(seen_pairs), n_exact)
