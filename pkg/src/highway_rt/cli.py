"""Command-line entry point: ``highway-rt {train,eval,predict,synth,gradcheck}``.

Every failure is reported as a single JSON line on stderr of the form
``{"error": "<ExceptionName>", "message": "..."}`` with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import load_corpus, save_corpus, generate_synthetic
from .errors import ConfigError, HRTError
from .gradcheck import model_gradcheck
from .training import evaluate, load_config, train, write_log

EXIT_USAGE = 2
EXIT_ERROR = 1


def _with_seed(model_cfg, seed):
    return model_cfg if seed is None else dataclasses.replace(model_cfg, seed=seed)


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_config(args.config)
    model_cfg = _with_seed(model_cfg, args.seed)
    corpus = load_corpus(args.corpus)
    valid = load_corpus(args.valid) if args.valid else None
    model, history = train(corpus, model_cfg, train_cfg, valid=valid, embeddings=args.embeddings)
    save_checkpoint(model, args.out)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log.jsonl")
    write_log(history, log_path)
    final = next((h for h in reversed(history) if h["split"] == "train"), None)
    print(json.dumps({"checkpoint": str(args.out), "log": str(log_path), "steps": final["step"] if final else 0}))
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    report = evaluate(model, load_corpus(args.corpus), with_loss=True)
    print(json.dumps(report.to_dict()) if args.json else report.table())
    return 0


def cmd_predict(args) -> int:
    model = load_checkpoint(args.ckpt)
    for record in load_corpus(args.dialogue):
        print(model.score_all(record).to_json())
    return 0


def cmd_synth(args) -> int:
    if args.n < 0:
        raise ConfigError(f"--n must be non-negative, got {args.n}")
    records = generate_synthetic(args.n, vocab_size=args.vocab, rng=args.seed)
    save_corpus(records, args.out)
    print(json.dumps({"records": len(records), "out": str(args.out)}))
    return 0


def cmd_gradcheck(args) -> int:
    model_cfg, _ = load_config(args.config)
    model_cfg = _with_seed(model_cfg, args.seed)
    report = model_gradcheck(model_cfg, max_entries=args.max_entries)
    print(report.summary())
    if not report.passed:
        worst = max(report.checks, key=lambda c: c.max_rel_error)
        _fail("GradientMismatch", f"{len(report.failures)} tensors exceed tolerance; worst {worst.name} "
              f"relative error {worst.max_rel_error:.3e}")
        return EXIT_ERROR
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="highway-rt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a ranker and write a checkpoint")
    p.add_argument("--config", help="flat JSON config (defaults apply to missing keys)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--valid", help="validation corpus; otherwise a fraction of --corpus is held out")
    p.add_argument("--log", help="training log path (default: <out>.log.jsonl)")
    p.add_argument("--embeddings", help="pretrained vectors, one 'token v1 v2 ...' line per token")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="report Recall@k and MRR for a corpus")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--json", action="store_true", help="emit JSON instead of a table")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="rank the candidates of each dialogue (JSON lines)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dialogue", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="write a synthetic keyword-echo corpus")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vocab", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-entries", type=int, default=None, help="sample at most this many entries per tensor")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _fail(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if exc.code in (0, None):
            return 0
        _fail("UsageError", "invalid command-line arguments")
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except HRTError as exc:
        _fail(type(exc).__name__, str(exc))
    except (OSError, ValueError) as exc:
        _fail(type(exc).__name__, str(exc))
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
