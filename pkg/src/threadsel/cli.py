"""Command-line entry point: ``threadsel <command> [options]``.

Exit codes: 0 on success, 1 on a data or runtime error (one ``threadsel:
error: <kind>: <message>`` line on stderr), 2 on a usage error.

Training and model configuration resolve in this order, later wins:
built-in defaults, the named preset, the ``--config`` file, explicit flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numeric as nm
from .checkpoint import CheckpointError
from .corpus import CorpusError, augment, build_vocab, filter_unanswerable, load_corpus, save_corpus
from .dependency import ForestError, chain_parser, forest_for, load_edges, save_edges
from .encoder import PRESETS, EncoderConfig
from .evaluation import evaluate, score_candidates
from .extraction import MODES, ExtractionConfig, build_threads, thread_stats
from .matching import batch_loss, batch_scores
from .model import ThreadEncoderModel, load_model, save_model
from .synthetic import ANSWER_POLICIES, DISTRACTOR_POLICIES, SyntheticSpec, generate_synthetic
from .trainer import TrainConfig, train

log = logging.getLogger("threadsel")

ENCODER_KEYS = {f.name for f in fields(EncoderConfig)}
TRAIN_KEYS = TrainConfig.keys()
HOLDOUT_FRACTION = 0.1


class UsageError(Exception):
    """Bad option values caught after argparse; exits with status 2."""


# -- config handling


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in ENCODER_KEYS | TRAIN_KEYS | {"preset"}:
            raise ValueError(f"{source}:{lineno}: unknown config key {key!r}")
        out[key] = value
    return out


def _coerce(key: str, value, types: dict):
    kind = types[key]
    if not isinstance(value, str):
        return value
    if kind == "bool":
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"config key {key!r} expects a boolean, got {value!r}")
        return low in ("true", "1", "yes")
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value


_TYPES = {f.name: f.type for f in fields(EncoderConfig)} | {f.name: f.type for f in fields(TrainConfig)}


def resolve_config(config: str | None, overrides: dict) -> tuple[EncoderConfig, TrainConfig]:
    """Merge preset, config file and flag overrides into the two config objects."""
    values: dict = {}
    preset = "desk"
    if config:
        if config in PRESETS:
            preset = config
        else:
            path = Path(config)
            if not path.is_file():
                raise UsageError(f"--config {config!r} is neither a preset ({', '.join(PRESETS)}) nor a file")
            values = parse_config_text(path.read_text(encoding="utf-8"), str(path))
            preset = values.pop("preset", preset)
            if preset not in PRESETS:
                raise ValueError(f"unknown preset {preset!r}")
    values.update({k: v for k, v in overrides.items() if v is not None})
    values = {k: _coerce(k, v, _TYPES) for k, v in values.items()}
    enc = EncoderConfig(**{**PRESETS[preset], **{k: v for k, v in values.items() if k in ENCODER_KEYS}})
    tc = TrainConfig(**{k: v for k, v in values.items() if k in TRAIN_KEYS})
    return enc, tc


# -- helpers


def _emit(obj, out: str | None = None) -> None:
    text = json.dumps(obj, sort_keys=True)
    if out:
        _ensure_parent(out)
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _ensure_parent(path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _load_forests(args):
    if getattr(args, "edges", None):
        return load_edges(args.edges, resolve_nearest=getattr(args, "resolve_nearest_parent", False))
    return None


def _ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(k) for k in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--ks expects comma-separated integers, got {text!r}")
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("--ks values must be >= 1")
    return ks


def _range(text: str) -> tuple[int, int]:
    parts = text.split(",")
    try:
        lo, hi = (int(parts[0]), int(parts[-1]))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LOW,HIGH integers, got {text!r}")
    return lo, hi


def _extraction(args) -> ExtractionConfig:
    return ExtractionConfig(args.threshold, args.max_threads)


# -- commands


def cmd_ingest(args) -> int:
    dialogues = load_corpus(args.corpus)
    labeled = filter_unanswerable(dialogues)
    samples = list(dialogues)
    n_aug = 0
    if args.augment:
        extra = augment(labeled, args.min_context)
        n_aug = len(extra)
        samples += extra
    tok = build_vocab(dialogues, args.vocab_size, args.min_freq)
    if args.out:
        _ensure_parent(args.out)
        save_corpus(samples, args.out)
    if args.vocab_out:
        _emit(tok.to_dict(), args.vocab_out)
    _emit({
        "dialogues": len(dialogues),
        "labeled": len(labeled),
        "unlabeled": len(dialogues) - len(labeled),
        "augmented": n_aug,
        "turns": sum(d.n for d in dialogues),
        "vocab_size": len(tok),
    })
    return 0


def cmd_parse(args) -> int:
    dialogues = load_corpus(args.corpus)
    given = _load_forests(args)
    forests = {d.id: forest_for(d, given) if given else chain_parser(d) for d in dialogues}
    if args.out:
        _ensure_parent(args.out)
        save_edges(forests, args.out)
    else:
        from .dependency import forest_to_json
        for did, f in forests.items():
            print(json.dumps(forest_to_json(did, f), sort_keys=True))
    log.info("wrote %d forests", len(forests))
    return 0


def cmd_extract(args) -> int:
    dialogues = load_corpus(args.corpus)
    forests = _load_forests(args)
    cfg = _extraction(args)
    lines = []
    for d in dialogues:
        ts = build_threads(forest_for(d, forests), args.mode, cfg)
        lines.append(json.dumps({"dialogue_id": d.id, "mode": args.mode, "threads": ts.as_lists()},
                                separators=(",", ":")))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        _ensure_parent(args.out)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_stats(args) -> int:
    dialogues = load_corpus(args.corpus)
    forests = _load_forests(args)
    cfg = _extraction(args)
    sets = [build_threads(forest_for(d, forests), args.mode, cfg) for d in dialogues]
    stats = thread_stats(sets, args.max_threads)
    _emit(stats.to_dict(), args.out)
    print(stats.table())
    return 0


def cmd_generate(args) -> int:
    spec = SyntheticSpec(
        num_dialogues=args.num_dialogues,
        threads_per_dialogue=args.threads,
        turns_per_thread=args.turns_per_thread,
        answer_thread_turns=args.answer_thread_turns,
        num_topics=args.num_topics,
        topic_vocab=args.topic_vocab,
        turn_length=args.turn_length,
        filler_rate=args.filler_rate,
        pool_size=args.pool_size,
        distractors=args.distractors,
        answer=args.answer,
        id_prefix=args.prefix,
    )
    dialogues, forests = generate_synthetic(spec, args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_corpus(dialogues, out / "corpus.jsonl")
    save_edges(forests, out / "edges.jsonl")
    _emit({"corpus": str(out / "corpus.jsonl"), "edges": str(out / "edges.jsonl"),
           "dialogues": len(dialogues), "seed": args.seed, "spec": spec.to_dict()})
    return 0


def _split_holdout(dialogues, seed: int):
    labeled = filter_unanswerable(dialogues)
    if len(labeled) < 4:
        raise ValueError("need --valid or at least 4 labeled training dialogues for a holdout")
    rng = np.random.default_rng([seed, 2])
    perm = rng.permutation(len(labeled))
    k = max(1, int(round(HOLDOUT_FRACTION * len(labeled))))
    held = {labeled[i].id for i in perm[:k]}
    return [d for d in dialogues if d.id not in held], [d for d in labeled if d.id in held]


def cmd_train(args) -> int:
    enc_cfg, tc = resolve_config(args.config, {
        "lr": args.lr, "batch": args.batch, "max_epochs": args.max_epochs, "mode": args.mode,
        "seed": args.seed, "threshold": args.threshold, "max_threads": args.max_threads,
        "augment": args.augment, "min_context": args.min_context, "vocab_size": args.vocab_size,
        "min_freq": args.min_freq, "num_codes": args.num_codes,
    })
    train_set = load_corpus(args.corpus)
    forests = _load_forests(args)
    if args.valid:
        valid_set = load_corpus(args.valid)
        valid_forests = load_edges(args.valid_edges, args.resolve_nearest_parent) if args.valid_edges else None
    else:
        train_set, valid_set = _split_holdout(train_set, tc.seed)
        valid_forests = forests
        log.info("holding out %d training dialogues for validation", len(valid_set))
    test_set = load_corpus(args.test) if args.test else None
    test_forests = load_edges(args.test_edges, args.resolve_nearest_parent) if args.test_edges else None

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tokenizer = build_vocab(train_set, tc.vocab_size, tc.min_freq)
    runs = []
    for i in range(args.seeds):
        cfg = replace(tc, seed=tc.seed + i)
        model, report = train(train_set, valid_set, cfg, enc_cfg, forests, valid_forests, tokenizer)
        suffix = "" if args.seeds == 1 else f"-seed{cfg.seed}"
        save_model(model, out / f"model{suffix}.ckpt", {"train": cfg.to_dict()})
        (out / f"curve{suffix}.txt").write_text(report.table() + "\n", encoding="utf-8")
        run = {"seed": cfg.seed, "report": report.to_dict(), "best_valid_hits1": report.best_record.valid_hits1}
        if test_set is not None:
            run["test"] = evaluate(model, test_set, test_forests, cfg.mode, cfg.extraction,
                                   args.ks, args.workers).to_dict()
        runs.append(run)
        print(report.table(), file=sys.stderr)
    summary = {"encoder": enc_cfg.to_dict(), "train": tc.to_dict(), "runs": runs,
               "mean_best_valid_hits1": float(np.mean([r["best_valid_hits1"] for r in runs]))}
    if test_set is not None:
        summary["mean_test"] = {
            "hits": {k: float(np.mean([r["test"]["hits"][k] for r in runs])) for k in runs[0]["test"]["hits"]},
            "mrr": float(np.mean([r["test"]["mrr"] for r in runs])),
        }
    (out / "report.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _emit(summary)
    return 0


def _model_mode(args, meta) -> str:
    return args.mode or meta.get("train", {}).get("mode", "dep-extr")


def cmd_eval(args) -> int:
    model, meta = load_model(args.checkpoint)
    dialogues = load_corpus(args.corpus)
    report = evaluate(model, dialogues, _load_forests(args), _model_mode(args, meta), _extraction(args),
                      args.ks, args.workers)
    _emit(report.to_dict(), args.out)
    print(report.table())
    return 0


def cmd_predict(args) -> int:
    model, meta = load_model(args.checkpoint)
    dialogues = load_corpus(args.corpus)
    forests = _load_forests(args)
    mode = _model_mode(args, meta)
    lines = []
    for d in dialogues:
        scores = score_candidates(model, d, forest_for(d, forests), mode, _extraction(args))
        probs = np.exp(scores - scores.max())
        probs /= probs.sum()
        lines.append(json.dumps({"dialogue_id": d.id, "scores": scores.tolist(),
                                 "probabilities": probs.tolist()}, sort_keys=True))
    text = "\n".join(lines) + "\n"
    if args.out:
        _ensure_parent(args.out)
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# two short dialogues exercise every layer, both aggregators and the loss
_GRADCHECK_CORPUS = [
    ([("a", "is the server down again"), ("b", "works for me"), ("a", "still failing here")],
     "try restarting it"),
    ([("c", "anyone tried the new kernel"), ("d", "which one"), ("e", "my wifi broke"),
      ("c", "the six point one release")], "it boots fine"),
]


def cmd_gradcheck(args) -> int:
    from .corpus import Dialogue
    from .dependency import validate_forest

    enc_cfg, _ = resolve_config(args.config, {"num_codes": args.num_codes})
    dialogues = [Dialogue.build(f"g{i}", turns, [resp], 0) for i, (turns, resp) in enumerate(_GRADCHECK_CORPUS)]
    forests = {"g0": chain_parser(dialogues[0]), "g1": validate_forest(4, [(2, 1, 0.9), (3, 1, 0.1), (4, 2, 0.7)])}
    tok = build_vocab(dialogues, 100)
    model = ThreadEncoderModel(enc_cfg, tok, seed=args.seed, init_std=args.init_std)
    extraction = ExtractionConfig()
    threads = [model.thread_inputs(d, forests[d.id], "dep-extr", extraction) for d in dialogues]
    cands = [model.candidate_input(d.response) for d in dialogues]

    def closure():
        ctx, mask = model.embed_contexts(threads)
        return batch_loss(batch_scores(ctx, model.embed_candidates(cands), mask))

    result = nm.grad_check(closure, model.parameters(), eps=args.eps, tolerance=args.tolerance,
                           sample=args.samples, seed=args.seed)
    status = "PASS" if result.passed else "FAIL"
    print(f"max_rel_error={result.max_rel_error:.3e} checked={result.n_checked} "
          f"tolerance={args.tolerance:g} {status}")
    return 0 if result.passed else 1


# -- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="threadsel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log more (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def extraction_flags(p):
        p.add_argument("--threshold", type=float, default=0.2, help="edge confidence threshold P")
        p.add_argument("--max-threads", type=int, default=4, help="thread cap M")

    def edges_flags(p, required=False):
        p.add_argument("--edges", required=required, help="dependency edges JSONL (default: chain fallback)")
        p.add_argument("--resolve-nearest-parent", action="store_true",
                       help="keep only the nearest parent when a turn lists several")

    p = sub.add_parser("ingest", help="validate a corpus, optionally augment, build a vocabulary")
    p.add_argument("--corpus", required=True)
    p.add_argument("--augment", action="store_true", help="add one sample per turn as a response")
    p.add_argument("--min-context", type=int, default=1)
    p.add_argument("--vocab-size", type=int, default=30000)
    p.add_argument("--min-freq", type=int, default=1)
    p.add_argument("--out", help="write the (augmented) corpus here")
    p.add_argument("--vocab-out", help="write the vocabulary JSON here")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("parse", help="emit dependency edges: validated input edges or the chain fallback")
    p.add_argument("--corpus", required=True)
    edges_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("extract", help="extract threads per dialogue")
    p.add_argument("--corpus", required=True)
    edges_flags(p)
    extraction_flags(p)
    p.add_argument("--mode", choices=MODES, default="dep-extr")
    p.add_argument("--out")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("stats", help="thread statistics as JSON and a table")
    p.add_argument("--corpus", required=True)
    edges_flags(p)
    extraction_flags(p)
    p.add_argument("--mode", choices=MODES, default="dep-extr")
    p.add_argument("--out", help="write the JSON here instead of stdout")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("generate", help="write a synthetic tangled-topic corpus and gold edges")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-dialogues", type=int, default=100)
    p.add_argument("--threads", type=int, default=3, help="topic threads per dialogue")
    p.add_argument("--turns-per-thread", type=_range, default=(3, 6), metavar="LOW,HIGH")
    p.add_argument("--answer-thread-turns", type=_range, default=None, metavar="LOW,HIGH")
    p.add_argument("--turn-length", type=_range, default=(6, 10), metavar="LOW,HIGH")
    p.add_argument("--num-topics", type=int, default=20)
    p.add_argument("--topic-vocab", type=int, default=50)
    p.add_argument("--filler-rate", type=float, default=0.0)
    p.add_argument("--pool-size", type=int, default=10)
    p.add_argument("--distractors", choices=DISTRACTOR_POLICIES, default="random")
    p.add_argument("--answer", choices=ANSWER_POLICIES, default="oldest")
    p.add_argument("--prefix", default="syn")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model; writes model.ckpt, report.json, curve.txt")
    p.add_argument("--config", help="preset name or key=value file")
    p.add_argument("--corpus", required=True)
    edges_flags(p)
    p.add_argument("--valid", help="validation corpus (default: 10%% holdout of --corpus)")
    p.add_argument("--valid-edges")
    p.add_argument("--test", help="optional test corpus evaluated after training")
    p.add_argument("--test-edges")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, default=1, help="train this many consecutive seeds and average")
    p.add_argument("--threshold", type=float)
    p.add_argument("--max-threads", type=int)
    p.add_argument("--augment", action="store_true", default=None)
    p.add_argument("--min-context", type=int)
    p.add_argument("--vocab-size", type=int)
    p.add_argument("--min-freq", type=int)
    p.add_argument("--num-codes", type=int, help="1 for average pooling, >1 for learned codes")
    p.add_argument("--ks", type=_ks, default=(1, 2, 5))
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "hits@k and MRR on a labeled corpus"),
                             ("predict", cmd_predict, "per-candidate scores and probabilities")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--corpus", required=True)
        edges_flags(p)
        extraction_flags(p)
        p.add_argument("--mode", choices=MODES, help="default: the mode the model was trained with")
        p.add_argument("--out")
        if name == "eval":
            p.add_argument("--ks", type=_ks, default=(1, 2, 5))
            p.add_argument("--workers", type=int, default=1)
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model gradient")
    p.add_argument("--config", default="toy", help="preset name or key=value file")
    p.add_argument("--num-codes", type=int, default=2)
    p.add_argument("--samples", type=int, default=400)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--init-std", type=float, default=0.2,
                   help="weight scale; larger than the training init so gradients sit well above roundoff")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


DATA_ERRORS = (CorpusError, ForestError, CheckpointError, ValueError, OSError, KeyError)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"threadsel: error: usage: {exc}", file=sys.stderr)
        return 2
    except DATA_ERRORS as exc:
        kind = type(exc).__name__
        msg = str(exc).replace("\n", " ")
        print(f"threadsel: error: {kind}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
