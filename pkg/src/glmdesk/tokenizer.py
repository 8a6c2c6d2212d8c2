"""Byte-level BPE: training, encoding/decoding, and vocabulary merging.

The base alphabet is the 256 byte values (ids 0..255).  Training greedily
merges the most frequent adjacent pair; ties go to the pair whose
``(left bytes, right bytes)`` is lexicographically smallest.  Special tokens
sit after the byte-level tokens and are never merged.

Vocabulary files are UTF-8 JSON::

    {"format": "glmdesk-bpe", "version": 1, "pre_split": false,
     "tokens": ["<base64>", ..., null],     # null marks a special id
     "merges": [[left_id, right_id], ...],  # in priority order
     "specials": {"[MASK]": id, ...}}
"""

from __future__ import annotations

import base64
import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _backend
from ._backend import njit
from .errors import DataError

DEFAULT_SPECIALS = ("[MASK]", "[SOP]", "[EOP]", "[PAD]")
FORMAT = "glmdesk-bpe"
VERSION = 1
_SPLIT = re.compile(rb"\s+\S*|\S+")
_SEP = -1


@dataclass
class BPEVocab:
    id_to_token: list  # bytes, or None for a special id
    merges: list  # [(left_id, right_id), ...] in priority order
    specials: dict = field(default_factory=dict)  # name -> id
    pre_split: bool = False

    def __post_init__(self):
        self.token_to_id = {}
        for i, tok in enumerate(self.id_to_token):
            if tok is None:
                continue
            if tok in self.token_to_id:
                raise DataError(f"duplicate token {tok!r} at ids {self.token_to_id[tok]} and {i}")
            self.token_to_id[tok] = i
        named = {i for i, t in enumerate(self.id_to_token) if t is None}
        if named != set(self.specials.values()) or len(self.specials) != len(named):
            raise DataError("special-token table does not match the null token slots")
        self.merge_results = []
        for rank, (left, right) in enumerate(self.merges):
            if not (0 <= left < self.size and 0 <= right < self.size):
                raise DataError(f"merge {rank} refers to unknown ids {(left, right)}")
            lt, rt = self.id_to_token[left], self.id_to_token[right]
            if lt is None or rt is None:
                raise DataError(f"merge {rank} uses a special token")
            res = self.token_to_id.get(lt + rt)
            if res is None:
                raise DataError(f"merge {rank} produces a token missing from the vocabulary")
            if left >= res or right >= res:
                raise DataError(f"merge {rank} uses a part that is not defined before its result")
            self.merge_results.append(res)
        self._tables = None

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def token_bytes(self, idx: int) -> bytes:
        tok = self.id_to_token[idx]
        if tok is None:
            raise ValueError(f"id {idx} is a special token")
        return tok

    def special_id(self, name: str) -> int:
        return self.specials[name]

    def _merge_tables(self):
        if self._tables is None:
            keys = np.array([(l << 32) | r for l, r in self.merges], dtype=np.int64)
            order = np.argsort(keys, kind="stable")
            ranks = np.arange(len(self.merges), dtype=np.int64)
            results = np.array(self.merge_results, dtype=np.int64)
            self._tables = (keys[order], ranks[order], results)
        return self._tables

    def __eq__(self, other):
        if not isinstance(other, BPEVocab):
            return NotImplemented
        return (
            self.id_to_token == other.id_to_token
            and [tuple(m) for m in self.merges] == [tuple(m) for m in other.merges]
            and self.specials == other.specials
            and self.pre_split == other.pre_split
        )

    # -- serialisation -----------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "format": FORMAT,
            "version": VERSION,
            "pre_split": self.pre_split,
            "tokens": [None if t is None else base64.b64encode(t).decode("ascii") for t in self.id_to_token],
            "merges": [[int(l), int(r)] for l, r in self.merges],
            "specials": {k: int(v) for k, v in self.specials.items()},
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BPEVocab":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataError(f"vocabulary is not valid JSON: {exc}") from exc
        if doc.get("format") != FORMAT:
            raise DataError("not a glmdesk BPE vocabulary")
        if doc.get("version") != VERSION:
            raise DataError(f"unsupported vocabulary version {doc.get('version')}")
        tokens = [None if t is None else base64.b64decode(t) for t in doc["tokens"]]
        merges = [tuple(m) for m in doc["merges"]]
        return cls(tokens, merges, dict(doc.get("specials", {})), bool(doc.get("pre_split", False)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "BPEVocab":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


# --------------------------------------------------------------------------
# kernels


@njit
def _pair_counts_nb(seq):
    n = seq.shape[0]
    keys = np.empty(max(n - 1, 0), dtype=np.int64)
    m = 0
    for i in range(n - 1):
        a = seq[i]
        b = seq[i + 1]
        if a >= 0 and b >= 0:
            keys[m] = (a << 32) | b
            m += 1
    keys = np.sort(keys[:m])
    uniq = np.empty(m, dtype=np.int64)
    counts = np.empty(m, dtype=np.int64)
    u = -1
    for i in range(m):
        if u < 0 or keys[i] != uniq[u]:
            u += 1
            uniq[u] = keys[i]
            counts[u] = 0
        counts[u] += 1
    return uniq[: u + 1], counts[: u + 1]


def _pair_counts_np(seq):
    a, b = seq[:-1], seq[1:]
    ok = (a >= 0) & (b >= 0)
    keys = (a[ok] << 32) | b[ok]
    return np.unique(keys, return_counts=True)


@njit
def _merge_pair_nb(seq, left, right, new_id):
    n = seq.shape[0]
    out = np.empty(n, dtype=np.int64)
    i = 0
    m = 0
    while i < n:
        if i + 1 < n and seq[i] == left and seq[i + 1] == right:
            out[m] = new_id
            i += 2
        else:
            out[m] = seq[i]
            i += 1
        m += 1
    return out[:m]


def _merge_pair_np(seq, left, right, new_id):
    hits = np.flatnonzero((seq[:-1] == left) & (seq[1:] == right))
    if hits.size == 0:
        return seq
    if left == right:
        # runs like "aaa" must pair up left to right without overlap
        keep = []
        last = -2
        for h in hits.tolist():
            if h > last + 1:
                keep.append(h)
                last = h
        hits = np.asarray(keep, dtype=np.int64)
    out = seq.copy()
    out[hits] = new_id
    drop = np.zeros(seq.shape[0], dtype=bool)
    drop[hits + 1] = True
    return out[~drop]


@njit
def _encode_nb(seq, keys, ranks, results):
    n_merges = keys.shape[0]
    while seq.shape[0] > 1 and n_merges > 0:
        best = n_merges
        for i in range(seq.shape[0] - 1):
            a = seq[i]
            b = seq[i + 1]
            if a < 0 or b < 0:
                continue
            key = (a << 32) | b
            j = np.searchsorted(keys, key)
            if j < n_merges and keys[j] == key and ranks[j] < best:
                best = ranks[j]
        if best == n_merges:
            break
        new_id = results[best]
        # locate the pair ids for this rank
        left = -1
        right = -1
        for j in range(n_merges):
            if ranks[j] == best:
                left = keys[j] >> 32
                right = keys[j] & 0xFFFFFFFF
                break
        seq = _merge_pair_nb(seq, left, right, new_id)
    return seq


def _encode_np(seq, keys, ranks, results):
    n_merges = keys.shape[0]
    while seq.shape[0] > 1 and n_merges:
        a, b = seq[:-1], seq[1:]
        ok = (a >= 0) & (b >= 0)
        pk = (a << 32) | b
        j = np.minimum(np.searchsorted(keys, pk), n_merges - 1)
        hit = ok & (keys[j] == pk)
        if not hit.any():
            break
        best = int(ranks[j[hit]].min())
        key = int(keys[np.flatnonzero(ranks == best)[0]])
        seq = _merge_pair_np(seq, key >> 32, key & 0xFFFFFFFF, int(results[best]))
    return seq


def _pair_counts(seq):
    return _pair_counts_nb(seq) if _backend.use_numba() else _pair_counts_np(seq)


def _merge_pair(seq, left, right, new_id):
    if _backend.use_numba():
        return _merge_pair_nb(seq, left, right, new_id)
    return _merge_pair_np(seq, left, right, new_id)


# --------------------------------------------------------------------------
# public API


def _to_sequence(data: bytes, pre_split: bool) -> np.ndarray:
    if not pre_split:
        return np.frombuffer(data, dtype=np.uint8).astype(np.int64)
    parts = []
    for chunk in _SPLIT.findall(data):
        parts.append(np.frombuffer(chunk, dtype=np.uint8).astype(np.int64))
        parts.append(np.array([_SEP], dtype=np.int64))
    return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)


def bpe_train(
    corpus: bytes | Iterable[bytes],
    target_size: int,
    specials: Sequence[str] = DEFAULT_SPECIALS,
    pre_split: bool = False,
) -> BPEVocab:
    """Learn merges until the byte-level vocabulary has ``target_size`` tokens.

    ``target_size`` counts the 256 byte tokens plus merges; ``specials`` are
    appended afterwards.  Training stops early once no adjacent pair occurs
    at least twice.  An iterable of documents is trained with a boundary
    between documents (no pair spans two of them).
    """
    if target_size <= 256:
        raise ValueError(f"target_size must exceed 256, got {target_size}")
    if isinstance(corpus, (bytes, bytearray, memoryview)):
        docs = [bytes(corpus)]
    else:
        docs = [bytes(d) for d in corpus]
    if not any(docs):
        raise ValueError("empty corpus")
    seqs = []
    for d in docs:
        seqs.append(_to_sequence(d, pre_split))
        seqs.append(np.array([_SEP], dtype=np.int64))
    seq = np.concatenate(seqs)

    tokens: list = [bytes([i]) for i in range(256)]
    merges: list = []
    while len(tokens) < target_size:
        keys, counts = _pair_counts(seq)
        if counts.size == 0:
            break
        top = counts.max()
        if top < 2:
            break
        cands = keys[counts == top]
        key = min(cands.tolist(), key=lambda k: (tokens[k >> 32], tokens[k & 0xFFFFFFFF]))
        left, right = key >> 32, key & 0xFFFFFFFF
        new_id = len(tokens)
        tokens.append(tokens[left] + tokens[right])
        merges.append((left, right))
        seq = _merge_pair(seq, left, right, new_id)

    specials_map = {}
    for name in specials:
        if name in specials_map:
            raise ValueError(f"duplicate special token {name!r}")
        specials_map[name] = len(tokens)
        tokens.append(None)
    return BPEVocab(tokens, merges, specials_map, pre_split)


def encode(vocab: BPEVocab, text: bytes) -> list[int]:
    """Apply ``vocab``'s merges in priority order to the bytes of ``text``."""
    if isinstance(text, str):
        text = text.encode("utf-8")
    seq = _to_sequence(bytes(text), vocab.pre_split)
    if seq.size == 0:
        return []
    keys, ranks, results = vocab._merge_tables()
    if _backend.use_numba():
        seq = _encode_nb(seq, keys, ranks, results)
    else:
        seq = _encode_np(seq, keys, ranks, results)
    return [int(t) for t in seq if t >= 0]


def decode(vocab: BPEVocab, ids: Iterable[int]) -> bytes:
    """Concatenate token bytes; special ids and unknown ids raise ``ValueError``."""
    out = []
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.size:
            raise ValueError(f"unknown token id {i}")
        tok = vocab.id_to_token[i]
        if tok is None:
            raise ValueError(f"id {i} is a special token and has no bytes")
        out.append(tok)
    return b"".join(out)


def merge_vocabs(a: BPEVocab, b: BPEVocab) -> BPEVocab:
    """Union of two vocabularies that keeps every id of ``a``.

    Tokens of ``b`` missing from ``a`` (by bytes, or by name for specials)
    are appended in ``b``'s id order; ``b``'s merges that create one of those
    tokens follow ``a``'s merges, so ``a``'s merge priorities are unchanged.
    """
    tokens = list(a.id_to_token)
    specials = dict(a.specials)
    by_bytes = dict(a.token_to_id)
    special_name = {v: k for k, v in b.specials.items()}
    novel = set()
    for idx, tok in enumerate(b.id_to_token):
        if tok is None:
            name = special_name[idx]
            if name not in specials:
                specials[name] = len(tokens)
                tokens.append(None)
        elif tok not in by_bytes:
            by_bytes[tok] = len(tokens)
            novel.add(tok)
            tokens.append(tok)
    merges = list(a.merges)
    for left, right in b.merges:
        lt, rt = b.id_to_token[left], b.id_to_token[right]
        if lt + rt in novel:
            merges.append((by_bytes[lt], by_bytes[rt]))
    return BPEVocab(tokens, merges, specials, a.pre_split)
