import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glmdesk.attention import MaskSpec
from glmdesk.decoder import GREEDY, KVCache, Temperature, decode_step, generate, prefill, sample
from glmdesk.errors import CacheOverflowError
from glmdesk.model import Model, ModelConfig

CFG = ModelConfig(n_layers=2, hidden=32, n_heads=4, n_kv_groups=2, vocab_size=60, max_positions=48)


@pytest.fixture(scope="module")
def model():
    return Model.init(CFG, 11)


def test_single_token_prefill_equals_decode_step(model):
    a = prefill(model, [7], KVCache.for_model(model))
    b = decode_step(model, 7, KVCache.for_model(model))
    assert a.tobytes() == b.tobytes()


def test_prefill_matches_full_forward(backend, model):
    prompt = [3, 9, 4, 1, 5, 9, 2, 6]
    cached = prefill(model, prompt, KVCache.for_model(model))
    np.testing.assert_allclose(cached, model.forward(prompt)[-1], atol=1e-5)


def test_empty_prompt_raises(model):
    with pytest.raises(ValueError, match="empty input"):
        prefill(model, [], KVCache.for_model(model))


def test_decode_after_prefill_matches_forward(backend, model):
    prompt = [5, 6, 7, 8, 9]
    cache = KVCache.for_model(model)
    prefill(model, prompt, cache)
    step = decode_step(model, 10, cache)
    np.testing.assert_allclose(step, model.forward(prompt + [10])[-1], atol=1e-5)


def test_greedy_decode_matches_repeated_forward(model):
    seq = [1, 2, 3]
    expected = []
    for _ in range(10):
        nxt = int(np.argmax(model.forward(seq + expected)[-1]))
        expected.append(nxt)
    assert generate(model, seq, 10, GREEDY, infill=False) == expected


def test_cache_overflow(model):
    cache = KVCache.for_model(model, capacity=4)
    prefill(model, [1], cache)
    for t in (2, 3, 4):
        decode_step(model, t, cache)
    with pytest.raises(CacheOverflowError):
        decode_step(model, 5, cache)
    assert cache.length == 4


def test_cache_footprint(model):
    cache = KVCache.for_model(model, capacity=30)
    assert cache.allocated_elements() == 2 * CFG.n_layers * CFG.n_kv_groups * 30 * CFG.head_dim


def test_cache_is_append_only(model):
    cache = KVCache.for_model(model)
    prefill(model, [1, 2, 3], cache)
    k0, v0 = cache.snapshot()
    decode_step(model, 4, cache)
    k1, v1 = cache.snapshot()
    assert np.array_equal(k1[:, :, :3], k0) and np.array_equal(v1[:, :, :3], v0)


def test_bidirectional_prefill_matches_prefix_forward(model):
    prompt = [4, 8, 15, 16, CFG.mask_id]
    cache = KVCache.for_model(model)
    last = prefill(model, prompt, cache, bidirectional=True)
    np.testing.assert_allclose(last, model.forward(prompt, mask=MaskSpec.prefix(5))[-1], atol=1e-5)


@given(seed=st.integers(0, 500), length=st.integers(1, 16), steps=st.integers(1, 6))
@settings(max_examples=15, deadline=None)
def test_cached_logits_match_forward_property(seed, length, steps):
    m = Model.init(ModelConfig(n_layers=1, hidden=16, n_heads=2, n_kv_groups=1, vocab_size=30, max_positions=32), seed)
    prompt = np.random.default_rng(seed).integers(0, 26, size=length).tolist()
    cache = KVCache.for_model(m)
    logits = prefill(m, prompt, cache)
    seq = list(prompt)
    for _ in range(steps):
        np.testing.assert_allclose(logits, m.forward(seq)[-1], atol=1e-5)
        tok = int(np.argmax(logits))
        seq.append(tok)
        logits = decode_step(m, tok, cache)


# sampling

def test_greedy_picks_max():
    assert sample([0.0, 5.0, 1.0]) == 1


def test_greedy_tie_break_lowest_id():
    assert sample([3.0, 3.0]) == 0


def test_low_temperature_converges_to_greedy():
    logits = np.random.default_rng(0).standard_normal(20)
    picks = [sample(logits, Temperature(1e-3, seed)) for seed in range(100)]
    assert picks == [int(np.argmax(logits))] * 100


def test_temperature_sampling_is_seeded_and_spread():
    logits = np.zeros(5)
    picks = [sample(logits, Temperature(1.0, seed)) for seed in range(200)]
    assert picks == [sample(logits, Temperature(1.0, seed)) for seed in range(200)]
    assert set(picks) == set(range(5))


def test_temperature_must_be_positive():
    with pytest.raises(ValueError):
        Temperature(0.0)


def test_infill_generation_is_deterministic(model):
    a = generate(model, [1, 2, 3], 8, Temperature(0.9, 7))
    b = generate(model, [1, 2, 3], 8, Temperature(0.9, 7))
    assert a == b
    assert CFG.eop_id not in a


def test_infill_first_step_matches_blank_infill_forward(model):
    prompt = [1, 2, 3]
    first = generate(model, prompt, 1, GREEDY)
    ids = prompt + [CFG.mask_id, CFG.sop_id]
    pos = [(0, 0), (1, 0), (2, 0), (3, 0), (3, 1)]
    logits = model.forward(ids, pos, MaskSpec.prefix(4))
    expected = int(np.argmax(logits[-1]))
    assert first == ([] if expected == CFG.eop_id else [expected])
