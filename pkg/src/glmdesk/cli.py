"""``glmdesk`` command line: filter → dedup → tok-train → tok-encode → train → generate, plus verify/bench.

Exit codes: 0 success, 1 usage error (bad flags or inconsistent options),
2 data error (unreadable/malformed input) or a failed verification.

Every subcommand writes a JSON run manifest: to ``--manifest`` if given,
otherwise next to ``--output`` as ``<output>.manifest.json``; commands
without an output file print it to standard error.  ``--config`` accepts a
JSON object of option values (or a previous manifest); explicit flags win.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _backend
from .errors import DataError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _common(p: argparse.ArgumentParser, output_required=True):
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads; never changes output bytes")
    p.add_argument("--config", help="JSON file of option values (or a previous run manifest)")
    p.add_argument("--manifest", help="where to write the run manifest")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glmdesk", description="Desk-scale GLM stack and pre-training data pipeline.")
    parser.add_argument("--version", action="version", version=f"glmdesk {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("filter", help="rule-based document filtering")
    p.add_argument("--input", required=True, help="input JSONL corpus")
    p.add_argument("--output", required=True, help="kept documents (JSONL)")
    p.add_argument("--dropped", help="optional JSONL of {id, reason} for dropped documents")
    p.add_argument("--rules", help="JSON file with url_blacklist, keyword_blocklist, min_length, max_symbol_ratio")
    p.add_argument("--url-blacklist", action="append", default=None, metavar="PATTERN")
    p.add_argument("--keyword", action="append", default=None, dest="keywords")
    p.add_argument("--min-length", type=int, default=None)
    p.add_argument("--max-symbol-ratio", type=float, default=None)
    _common(p)

    p = sub.add_parser("dedup", help="exact + MinHash/LSH near-duplicate removal")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="surviving documents (JSONL)")
    p.add_argument("--report", help="JSONL of {kept_id, dropped_id, estimated_jaccard}")
    p.add_argument("--n-perm", type=int, default=128)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--rows", type=int, default=8)
    p.add_argument("--threshold", type=float, default=0.8)
    p.add_argument("--shingle", type=int, default=8, help="byte shingle size k")
    _common(p)

    p = sub.add_parser("tok-train", help="train a byte-level BPE vocabulary")
    p.add_argument("--input", required=True, help="JSONL corpus (text field)")
    p.add_argument("--output", required=True, help="vocabulary JSON")
    p.add_argument("--vocab-size", type=int, default=512, help="byte tokens + merges (specials extra)")
    p.add_argument("--pre-split", action="store_true", help="never merge across whitespace boundaries")
    p.add_argument("--merge-with", help="existing vocabulary whose ids are kept; the new one is merged into it")
    _common(p)

    p = sub.add_parser("tok-encode", help="encode a JSONL corpus to token ids")
    p.add_argument("--vocab", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="JSONL of {id, ids}")
    _common(p)

    p = sub.add_parser("train", help="train a GLM model with the blank-infilling objective")
    p.add_argument("--tokens", required=True, help="JSONL of {id, ids} from tok-encode")
    p.add_argument("--vocab", required=True)
    p.add_argument("--output", required=True, help="checkpoint file")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--kv-groups", type=int, default=2)
    p.add_argument("--seq-len", type=int, default=64)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--pool-size", type=int, default=None, help="samples drawn once and cycled (default batch size)")
    p.add_argument("--untied", action="store_true", help="separate output projection")
    _common(p)

    p = sub.add_parser("generate", help="fill a blank after the prompt (or continue it)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--prompt", default="")
    p.add_argument("--max-new-tokens", type=int, default=32)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--greedy", action="store_true", help="argmax decoding (default)")
    g.add_argument("--temperature", type=float, help="sample from softmax(logits / T)")
    p.add_argument("--mode", choices=("infill", "causal"), default="infill")
    p.add_argument("--output", help="write generated bytes here instead of stdout")
    _common(p)

    p = sub.add_parser("verify", help="run the oracle suites and print a pass/fail table")
    p.add_argument("--quick", action="store_true", help="smaller suites (sampled gradient check)")
    p.add_argument("--only", action="append", help="run only the named suite (repeatable)")
    p.add_argument("--output", help="also write the table here")
    _common(p)

    p = sub.add_parser("bench", help="prefill/decode tokens-per-second for both kernel backends")
    p.add_argument("--checkpoint", help="model to benchmark (default: random tiny model)")
    p.add_argument("--prompt-len", type=int, default=64)
    p.add_argument("--decode-tokens", type=int, default=32)
    p.add_argument("--repeats", type=int, default=3)
    _common(p)
    return parser


def _config_path(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    if isinstance(data, dict) and "command" in data and isinstance(data.get("config"), dict):
        data = data["config"]  # a previous run manifest
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    return data


def _parse(argv):
    parser = build_parser()
    command = next((t for t in argv if not t.startswith("-")), None)
    subparsers = parser._subparsers._group_actions[0].choices
    path = _config_path(argv)
    if path and command in subparsers:
        sub = subparsers[command]
        data = {k: v for k, v in _load_config(path).items() if k not in ("config", "manifest")}
        actions = {a.dest: a for a in sub._actions}
        unknown = sorted(set(data) - set(actions))
        if unknown:
            raise UsageError(f"unknown config keys: {unknown}")
        for key in data:
            actions[key].required = False
        sub.set_defaults(**data)
    args = parser.parse_args(argv)
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    return args


# ---------------------------------------------------------------------------
# subcommands; each returns (outputs, inputs, extra manifest fields)


def _cmd_filter(args):
    from .datapipe import FilterRules, filter_corpus, read_documents, write_documents
    from .datapipe.documents import dumps_jsonl

    rules = {}
    if args.rules:
        try:
            with open(args.rules, encoding="utf-8") as fh:
                rules = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read rules {args.rules}: {exc}") from exc
    if args.url_blacklist:
        rules["url_blacklist"] = list(rules.get("url_blacklist", [])) + args.url_blacklist
    if args.keywords:
        rules["keyword_blocklist"] = list(rules.get("keyword_blocklist", [])) + args.keywords
    if args.min_length is not None:
        rules["min_length"] = args.min_length
    if args.max_symbol_ratio is not None:
        rules["max_symbol_ratio"] = args.max_symbol_ratio
    try:
        ruleset = FilterRules.from_dict(rules)
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    docs = read_documents(args.input)
    kept, dropped = filter_corpus(docs, ruleset)
    write_documents(args.output, kept)
    outputs = [args.output]
    if args.dropped:
        Path(args.dropped).write_text(dumps_jsonl({"id": d.id, "reason": r} for d, r in dropped), encoding="utf-8")
        outputs.append(args.dropped)
    return outputs, [args.input], {"kept": len(kept), "dropped": len(dropped)}


def _cmd_dedup(args):
    from .datapipe import lsh_dedup, read_documents, write_documents
    from .datapipe.documents import dumps_jsonl

    if args.bands * args.rows != args.n_perm:
        raise UsageError(f"bands * rows must equal n_perm ({args.bands} * {args.rows} != {args.n_perm})")
    if args.shingle < 1 or not 0 <= args.threshold <= 1:
        raise UsageError("--shingle must be >= 1 and --threshold within [0, 1]")
    docs = read_documents(args.input)
    result = lsh_dedup(docs, args.n_perm, args.bands, args.rows, args.threshold,
                       seed=args.seed, shingle_k=args.shingle, threads=args.threads)
    write_documents(args.output, result.kept)
    outputs = [args.output]
    if args.report:
        Path(args.report).write_text(dumps_jsonl(result.report), encoding="utf-8")
        outputs.append(args.report)
    return outputs, [args.input], {
        "kept": len(result.kept), "dropped": len(result.report),
        "exact_duplicates": result.exact_duplicates, "candidate_pairs": result.candidate_pairs,
    }


def _cmd_tok_train(args):
    from .datapipe import read_documents
    from .tokenizer import BPEVocab, bpe_train, merge_vocabs

    if args.vocab_size <= 256:
        raise UsageError("--vocab-size must exceed 256")
    docs = read_documents(args.input)
    vocab = bpe_train([d.text.encode("utf-8") for d in docs], args.vocab_size, pre_split=args.pre_split)
    inputs = [args.input]
    if args.merge_with:
        vocab = merge_vocabs(BPEVocab.load(args.merge_with), vocab)
        inputs.append(args.merge_with)
    vocab.save(args.output)
    return [args.output], inputs, {"size": vocab.size, "merges": len(vocab.merges)}


def _cmd_tok_encode(args):
    from concurrent.futures import ThreadPoolExecutor

    from .datapipe import read_documents
    from .datapipe.documents import dumps_jsonl
    from .tokenizer import BPEVocab, encode

    vocab = BPEVocab.load(args.vocab)
    docs = read_documents(args.input)
    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        encoded = list(pool.map(lambda d: encode(vocab, d.text.encode("utf-8")), docs))
    Path(args.output).write_text(
        dumps_jsonl({"id": d.id, "ids": ids} for d, ids in zip(docs, encoded)), encoding="utf-8")
    n_tokens = sum(len(e) for e in encoded)
    return [args.output], [args.vocab, args.input], {"documents": len(docs), "tokens": n_tokens}


def _read_token_docs(path):
    from .datapipe.documents import iter_jsonl

    seqs = []
    for lineno, obj in iter_jsonl(path):
        ids = obj.get("ids") if isinstance(obj, dict) else None
        if not isinstance(ids, list) or not all(isinstance(i, int) for i in ids):
            raise DataError(f"{path}:{lineno}: expected an object with an integer list 'ids'")
        if ids:
            seqs.append(np.asarray(ids, dtype=np.int64))
    if not seqs:
        raise DataError(f"{path}: no tokens to train on")
    return seqs


def _model_config(vocab, args, max_positions):
    from .model import ModelConfig

    return ModelConfig(
        n_layers=args.layers, hidden=args.hidden, n_heads=args.heads, n_kv_groups=args.kv_groups,
        vocab_size=vocab.size, max_positions=max_positions, tie_embeddings=not args.untied,
        mask_id=vocab.specials["[MASK]"], sop_id=vocab.specials["[SOP]"],
        eop_id=vocab.specials["[EOP]"], pad_id=vocab.specials["[PAD]"],
    )


def _cmd_train(args):
    from .model import OptimizerState, init_params, make_blank_infill, sample_spans, train_step
    from .model.checkpoint import save
    from .numerics import make_rng
    from .tokenizer import BPEVocab

    if min(args.steps, args.seq_len, args.batch_size) < 1 or args.lr < 0:
        raise UsageError("--steps, --seq-len, --batch-size must be positive and --lr non-negative")
    vocab = BPEVocab.load(args.vocab)
    missing = {"[MASK]", "[SOP]", "[EOP]", "[PAD]"} - set(vocab.specials)
    if missing:
        raise DataError(f"vocabulary lacks special tokens {sorted(missing)}")
    try:
        cfg = _model_config(vocab, args, max_positions=2 * args.seq_len + 1)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    seqs = _read_token_docs(args.tokens)
    if max(int(s.max()) for s in seqs) >= vocab.size:
        raise DataError("token ids exceed the vocabulary size")

    rng = make_rng(args.seed)
    pool_size = args.pool_size or args.batch_size
    pool = []
    for _ in range(pool_size):
        doc = seqs[int(rng.integers(0, len(seqs)))]
        start = int(rng.integers(0, max(1, doc.size - args.seq_len + 1)))
        window = doc[start : start + args.seq_len]
        pool.append(make_blank_infill(window, sample_spans(window.size, rng), cfg, seed=rng))
    params = init_params(cfg, rng)
    state = OptimizerState(args.optimizer)
    losses = []
    for step in range(args.steps):
        batch = [pool[(step * args.batch_size + i) % pool_size] for i in range(args.batch_size)]
        params, value = train_step(cfg, params, batch, state, args.lr)
        losses.append(value)
    save(args.output, cfg, params)
    return [args.output], [args.tokens, args.vocab], {
        "first_loss": losses[0], "final_loss": losses[-1], "model": cfg.to_dict(),
    }


def _cmd_generate(args):
    from .decoder import GREEDY, Temperature, generate
    from .model import Model
    from .model.checkpoint import load
    from .tokenizer import BPEVocab, encode

    if args.max_new_tokens < 1:
        raise UsageError("--max-new-tokens must be >= 1")
    if args.temperature is not None and args.temperature <= 0:
        raise UsageError("--temperature must be > 0")
    cfg, params = load(args.checkpoint)
    vocab = BPEVocab.load(args.vocab)
    if vocab.size != cfg.vocab_size:
        raise DataError(f"vocabulary size {vocab.size} does not match checkpoint ({cfg.vocab_size})")
    model = Model(cfg, params)
    prompt = encode(vocab, args.prompt.encode("utf-8"))
    if args.mode == "causal" and not prompt:
        raise UsageError("causal generation needs a non-empty --prompt")
    room = cfg.max_positions - len(prompt) - 2
    if room < 1:
        raise UsageError(f"prompt of {len(prompt)} tokens leaves no room (max_positions {cfg.max_positions})")
    strategy = GREEDY if args.temperature is None else Temperature(args.temperature, args.seed)
    ids = generate(model, prompt, min(args.max_new_tokens, room), strategy, infill=args.mode == "infill")
    text = b"".join(vocab.id_to_token[i] for i in ids if vocab.id_to_token[i] is not None)
    if args.output:
        Path(args.output).write_bytes(text)
        return [args.output], [args.checkpoint, args.vocab], {"tokens": ids}
    sys.stdout.buffer.write(text + b"\n")
    sys.stdout.flush()
    return [], [args.checkpoint, args.vocab], {"tokens": ids, "sha256": hashlib.sha256(text).hexdigest()}


def _cmd_verify(args):
    from .verify import SUITES, run_all

    if args.only:
        bad = set(args.only) - set(SUITES)
        if bad:
            raise UsageError(f"unknown suite(s) {sorted(bad)}; choose from {sorted(SUITES)}")
    results = run_all(seed=args.seed, quick=args.quick, only=args.only)
    lines = [r.line() for r in results]
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} suites passed")
    table = "\n".join(lines) + "\n"
    sys.stdout.write(table)
    outputs = []
    if args.output:
        Path(args.output).write_text(table, encoding="utf-8")
        outputs.append(args.output)
    extra = {"passed": n_pass, "total": len(results)}
    if n_pass != len(results):
        extra["_exit"] = EXIT_DATA
    return outputs, [], extra


def _cmd_bench(args):
    from .bench import bench_decode, format_table

    rows = bench_decode(args.checkpoint, args.prompt_len, args.decode_tokens, args.repeats, args.seed)
    sys.stdout.write(format_table(rows))
    return [], [args.checkpoint] if args.checkpoint else [], {"results": rows}


COMMANDS = {
    "filter": _cmd_filter,
    "dedup": _cmd_dedup,
    "tok-train": _cmd_tok_train,
    "tok-encode": _cmd_tok_encode,
    "train": _cmd_train,
    "generate": _cmd_generate,
    "verify": _cmd_verify,
    "bench": _cmd_bench,
}


def _write_manifest(args, argv, outputs, inputs, extra, elapsed):
    config = {k: v for k, v in vars(args).items() if k not in ("command", "config", "manifest")}
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seed": args.seed,
        "threads": args.threads,
        "backend": _backend.active_backend(),
        "version": __version__,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "timing": {"seconds": round(elapsed, 6)},
    }
    manifest.update({k: v for k, v in extra.items() if not k.startswith("_")})
    text = json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n"
    target = args.manifest or (f"{outputs[0]}.manifest.json" if outputs else None)
    if target:
        Path(target).write_text(text, encoding="utf-8")
    else:
        sys.stderr.write(text)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
        start = time.perf_counter()
        outputs, inputs, extra = COMMANDS[args.command](args)
        _write_manifest(args, argv, outputs, inputs, extra, time.perf_counter() - start)
        return extra.get("_exit", EXIT_OK)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"glmdesk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, IsADirectoryError, PermissionError, UnicodeDecodeError) as exc:
        print(f"glmdesk: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
