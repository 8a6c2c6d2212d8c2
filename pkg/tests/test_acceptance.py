"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py`` (lines appear in the
terminal summary) or ``python3 tests/test_acceptance.py``.
"""

import time

import pytest

from glmdesk import verify

from pipeline import OUTPUTS, run_cli, run_pipeline

RESULTS: list[str] = []


def _record(number: int, title: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  criterion {number:>2}  {title:<34} {detail}")


def _timed(fn, **kw):
    start = time.perf_counter()
    result = fn(seed=0, **kw)
    return result, time.perf_counter() - start


def _suite_criterion(number, title, suite, budget, **kw):
    result, seconds = _timed(suite, **kw)
    ok = result.passed and (budget is None or seconds < budget)
    limit = "" if budget is None else f" (budget {budget:.0f} s)"
    _record(number, title, ok, f"{result.metric:.3e} vs {result.tolerance:.1e}; {seconds:.1f} s{limit}; {result.detail}")
    assert result.passed, result.line()
    assert budget is None or seconds < budget, f"took {seconds:.1f} s, budget {budget} s"


def test_criterion_01_gqa_degeneracy():
    _suite_criterion(1, "GQA degeneracy", verify.gqa_degeneracy, 5)


def test_criterion_02_tiled_attention():
    _suite_criterion(2, "tiled attention equivalence", verify.tiled_vs_naive, 30)


def test_criterion_03_kv_cache():
    _suite_criterion(3, "KV-cache equivalence", verify.kv_cache_equivalence, 60, n_models=20)


def test_criterion_04_gradient_check():
    _suite_criterion(4, "gradient check (every parameter)", verify.gradient_check, 120)


def test_criterion_05_mask_containment():
    _suite_criterion(5, "blank-infilling mask correctness", verify.mask_containment, 30)


def test_criterion_06_memorization():
    _suite_criterion(6, "memorization run", verify.memorization, 120, steps=200)


def test_criterion_07_rope():
    _suite_criterion(7, "RoPE properties", verify.rope_properties, None, trials=1000)


def test_criterion_08_tokenizer():
    _suite_criterion(8, "tokenizer", verify.tokenizer_roundtrip, None, n_strings=1000)


def test_criterion_09_minhash_lsh():
    start = time.perf_counter()
    stats = verify.minhash_statistics(seed=0, n_seeds=50)
    planted = verify.lsh_planted(seed=0)
    seconds = time.perf_counter() - start
    ok = stats.passed and planted.passed and seconds < 60
    _record(9, "MinHash statistics + LSH recall", ok,
            f"bound ratio {stats.metric:.3f}; {planted.detail}; {seconds:.1f} s (budget 60 s)")
    assert stats.passed, stats.line()
    assert planted.passed, planted.line()
    assert seconds < 60


@pytest.mark.slow
def test_criterion_10_end_to_end_determinism(tmp_path):
    problems = []
    tables = []
    for i, threads in enumerate((1, 1, 4)):
        out = tmp_path / f"verify{i}.txt"
        proc = run_cli(["verify", "--seed", "0", "--threads", str(threads), "--output", str(out)],
                       tmp_path, hash_seed=str(i))
        if proc.returncode != 0:
            problems.append(f"verify run {i} exited {proc.returncode}")
        tables.append(out.read_bytes() if out.exists() else b"")
    if len(set(tables)) != 1:
        problems.append("verify tables differ")

    runs = [run_pipeline(tmp_path / f"run{i}", threads=t, hash_seed=str(i)) for i, t in enumerate((1, 1, 4))]
    differing = [name for name in OUTPUTS if len({r[name] for r in runs}) != 1]
    if differing:
        problems.append(f"pipeline outputs differ: {differing}")

    detail = "verify x3 + pipeline x3 (threads 1,1,4; distinct hash seeds): "
    detail += "byte-identical" if not problems else "; ".join(problems)
    _record(10, "end-to-end determinism", not problems, detail)
    assert not problems, detail


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q"]))
