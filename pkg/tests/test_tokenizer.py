import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glmdesk import _backend
from glmdesk.errors import DataError
from glmdesk.tokenizer import BPEVocab, bpe_train, decode, encode, merge_vocabs

TEXT = b"the cat sat on the mat. the cat ate the rat. " * 8


@pytest.fixture(scope="module")
def vocab():
    return bpe_train(TEXT, 300)


def _tok(v, i):
    return v.id_to_token[i]


def test_aaaa_first_merge_and_stop():
    v = bpe_train(b"aaaa", 258)
    assert [(_tok(v, l), _tok(v, r)) for l, r in v.merges][0] == (b"a", b"a")
    # after the first merge the sequence is [aa, aa]: that pair occurs once, below the
    # frequency-2 floor, so training stops at one merge
    assert len(v.merges) == 1


def test_longer_run_merges_aa_aa():
    v = bpe_train(b"a" * 8, 258)
    assert [(_tok(v, l), _tok(v, r)) for l, r in v.merges] == [(b"a", b"a"), (b"aa", b"aa")]


def test_distinct_bytes_give_no_merges():
    v = bpe_train(bytes(range(256)), 300)
    assert v.merges == []
    assert v.size == 256 + 4


def test_abab_merges_ab():
    v = bpe_train(b"abab", 257)
    assert [(_tok(v, l), _tok(v, r)) for l, r in v.merges] == [(b"a", b"b")]


def test_frequency_tie_breaks_on_bytes():
    # (x,y) and (c,d) both occur twice; "cd" sorts first
    v = bpe_train(b"cdxycdxy", 257)
    assert _tok(v, v.merges[0][0]) + _tok(v, v.merges[0][1]) == b"cd"


def test_specials_follow_byte_and_merge_tokens(vocab):
    n = 256 + len(vocab.merges)
    assert sorted(vocab.specials.values()) == list(range(n, n + 4))
    assert vocab.size == n + 4


def test_target_size_must_exceed_byte_alphabet():
    with pytest.raises(ValueError):
        bpe_train(b"abc", 256)


def test_empty_encode_decode(vocab):
    assert encode(vocab, b"") == []
    assert decode(vocab, []) == b""


def test_no_applicable_merge_one_id_per_byte(vocab):
    data = bytes([0, 255, 7, 200])
    assert encode(vocab, data) == list(data)


def test_encode_uses_merges(vocab):
    ids = encode(vocab, b"the cat")
    assert len(ids) < len(b"the cat")
    assert decode(vocab, ids) == b"the cat"


@given(st.binary(max_size=200))
@settings(max_examples=300, deadline=None)
def test_roundtrip_any_bytes(vocab, data):
    assert decode(vocab, encode(vocab, data)) == data


def test_roundtrip_invalid_utf8(vocab):
    data = b"\xff\xfe the \xc3\x28 cat \xed\xa0\x80"
    assert decode(vocab, encode(vocab, data)) == data


def test_decode_rejects_special_and_unknown(vocab):
    with pytest.raises(ValueError):
        decode(vocab, [vocab.specials["[MASK]"]])
    with pytest.raises(ValueError):
        decode(vocab, [10_000])


def test_training_is_deterministic(tmp_path):
    paths = []
    for i in range(2):
        p = tmp_path / f"v{i}.json"
        bpe_train(TEXT, 320).save(p)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1]


def test_backends_train_and_encode_identically():
    out = []
    for name in ("numba", "numpy"):
        with _backend.use_backend(name):
            v = bpe_train([TEXT, b"another document, another day"], 330, pre_split=True)
            out.append((v.to_json(), encode(v, TEXT[:100])))
    assert out[0] == out[1]


def test_pre_split_never_merges_across_whitespace():
    v = bpe_train(b"ab ab ab ab", 300, pre_split=True)
    for tok in v.id_to_token[256:]:
        if tok is not None:
            assert not (tok.strip() and b" " in tok.strip())


def test_documents_do_not_merge_across_boundaries():
    v = bpe_train([b"xa", b"ax", b"xa", b"ax"], 300)
    assert all(_tok(v, l) + _tok(v, r) != b"ax" + b"xa" for l, r in v.merges)
    assert b"ax" in v.token_to_id and b"xa" in v.token_to_id
    assert b"axa" not in v.token_to_id and b"xax" not in v.token_to_id


def test_json_round_trip(tmp_path, vocab):
    p = tmp_path / "v.json"
    vocab.save(p)
    assert BPEVocab.load(p) == vocab


def test_malformed_vocab_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{"format": "something-else"}')
    with pytest.raises(DataError):
        BPEVocab.load(p)


# merging vocabularies

def test_merge_is_idempotent(vocab):
    assert merge_vocabs(vocab, vocab) == vocab


def test_merge_preserves_ids_of_a(vocab):
    other = bpe_train(b"lorem ipsum dolor sit amet, lorem ipsum " * 5, 300)
    merged = merge_vocabs(vocab, other)
    assert merged.id_to_token[: vocab.size] == vocab.id_to_token
    assert merged.merges[: len(vocab.merges)] == vocab.merges
    assert all(merged.specials[k] == v for k, v in vocab.specials.items())


def test_disjoint_merges_size():
    a = bpe_train(b"aaaaaaaa", 258, specials=())
    b = bpe_train(b"zzzzzzzz", 258, specials=())
    assert merge_vocabs(a, b).size == a.size + b.size - 256


def test_merged_encodes_a_text_like_a(vocab):
    other = bpe_train(b"qqqq wwww qqqq wwww " * 6, 290)
    merged = merge_vocabs(vocab, other)
    for text in (b"the cat sat", b"on the mat. the rat", TEXT[:60]):
        assert encode(merged, text) == encode(vocab, text)
    assert decode(merged, encode(merged, b"qqqq the")) == b"qqqq the"


@given(a=st.binary(min_size=2, max_size=60), b=st.binary(min_size=2, max_size=60), data=st.binary(max_size=80))
@settings(max_examples=40, deadline=None)
def test_merged_vocab_roundtrips(a, b, data):
    va, vb = bpe_train(a * 3, 280), bpe_train(b * 3, 280)
    merged = merge_vocabs(va, vb)
    assert merged.id_to_token[: va.size] == va.id_to_token
    assert decode(merged, encode(merged, data)) == data
