"""Command-line entry point.

Subcommands: synth-data, prepare, train, generate, evaluate, baseline.
Every command is deterministic under --seed. Failures print one
machine-parseable line to stderr:

    error code=<NAME> message="..."

with distinct exit codes: 2 usage (argparse), 3 missing file,
4 checkpoint/config mismatch, 5 data parse error, 1 anything else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .baselines import bag_of_words_embedder, mean_embedding_embedder, random_sentence_baseline, \
    retrieval_sentence_baseline
from .data import DataConfig, ParseError, filter_record, read_raw_jsonl, read_records_jsonl, \
    select_best_answer, write_records_jsonl
from .decode import GenerationConfig, beam_decode, greedy_decode
from .metrics import evaluate_texts, read_gold, read_predictions, report_csv, report_table
from .model import ModelConfig
from .synth import TASKS, gen_synthetic_raw
from .trainer import CheckpointError, load_checkpoint, save_checkpoint, train
from .vocab import Vocab, build_vocab

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MISSING_FILE = 3
EXIT_CHECKPOINT = 4
EXIT_PARSE = 5


def _fail(code: int, name: str, message: str) -> int:
    print(f'error code={name} message="{message}"', file=sys.stderr)
    return code


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


# -- subcommands ---------------------------------------------------------------


def cmd_synth_data(args) -> int:
    records = gen_synthetic_raw(args.seed, args.n, args.k, args.vocab_size, args.task)
    _write_jsonl(Path(args.out), records)
    print(f"wrote {len(records)} records to {args.out}")
    return EXIT_OK


def cmd_prepare(args) -> int:
    raw = read_raw_jsonl(args.input)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = DataConfig(n_q=args.n_q, n_r=args.n_r, n_a=args.n_a, k_passages=args.k)
    corpus = []
    for r in raw:
        corpus.append(r.get("question_text", ""))
        corpus.extend(r.get("review_snippets", []))
        corpus.extend(a.get("text", "") for a in r.get("answers", []))
    vocab = build_vocab(corpus, args.vocab_size)
    vocab.save(out_dir / "vocab.txt")

    kept, rejected = [], []
    for r in raw:
        rec, reason = filter_record(r, vocab, config)
        if rec is None:
            rejected.append({"id": r.get("id"), "reason": reason})
        else:
            kept.append(rec)
    write_records_jsonl(kept, out_dir / "records.jsonl")
    gold_rows = [
        {"id": rec.qid, "texts": [vocab.decode_text(a) for a in rec.answers]}
        for rec in kept
    ]
    _write_jsonl(out_dir / "gold.jsonl", gold_rows)
    _write_jsonl(out_dir / "rejected.jsonl", rejected)
    print(f"kept {len(kept)} records, rejected {len(rejected)}; vocab size {len(vocab)}")
    return EXIT_OK


def _config_from_args(args, vocab_size: int) -> ModelConfig:
    base: dict = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
    overrides = {
        "vocab_size": vocab_size,
        "d": args.d,
        "blocks": args.blocks,
        "heads": args.heads,
        "ff_size": args.ff_size,
        "n_q": args.n_q,
        "n_r": args.n_r,
        "n_a": args.n_a,
        "k_passages": args.k,
        "variant": args.variant,
        "peak_lr": args.peak_lr,
        "total_steps": args.total_steps,
        "epochs": args.epochs,
        "seed": args.seed,
        "precision": args.precision,
        "weight_decay": args.weight_decay,
    }
    # command line wins over the config file; argparse defaults fill the rest
    merged = {**{f.name: getattr(ModelConfig, "__dataclass_fields__")[f.name].default
                 for f in dataclasses.fields(ModelConfig)
                 if not isinstance(f.default, dataclasses._MISSING_TYPE)},
              **base}
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    return ModelConfig(**merged)


def cmd_train(args) -> int:
    vocab = Vocab.load(args.vocab)
    records = read_records_jsonl(args.data)
    config = _config_from_args(args, len(vocab))
    resume = load_checkpoint(args.resume) if args.resume else None
    ckpt, metrics = train(config, records, resume=resume)
    save_checkpoint(ckpt, args.out)
    if args.metrics:
        with open(args.metrics, "w", encoding="utf-8") as f:
            f.write("step,lr,loss,grad_norm\n")
            for row in metrics:
                f.write(f"{row.step},{row.lr:.10g},{row.loss:.8f},{row.grad_norm:.8f}\n")
    last = metrics[-1].loss if metrics else float("nan")
    print(f"trained to step {ckpt.step} (final loss {last:.4f}); checkpoint at {args.out}")
    return EXIT_OK


def _generate_one(payload):
    model, vocab, gen, use_beam, trace, record = payload
    question, passages = record.question, record.passages
    if use_beam:
        tokens, beams = beam_decode(model, question, passages, gen)
        scores = [s for _, s in beams]
    else:
        tokens = greedy_decode(model, question, passages, gen)
        scores = []
    row = {
        "question_id": record.qid,
        "generated_text": vocab.decode_text(tokens),
        "beam_scores": scores,
    }
    if trace:
        row["trace"] = _trace_rows(model, vocab, gen, record)
    return row


def _trace_rows(model, vocab, gen, record) -> list[dict]:
    """Per-passage intermediate answers plus mean gate values under teacher forcing."""
    from .data import assemble_group
    from .memory import read_passages
    from .tensor import no_grad

    rows = []
    for k in range(1, len(record.passages) + 1):
        partial_tokens = greedy_decode(model, record.question, record.passages[:k], gen)
        rows.append({"k": k, "intermediate_answer": vocab.decode_text(partial_tokens)})
    best = select_best_answer(record.votes)
    group = assemble_group(record, model.config.data_config)
    with no_grad():
        _, trace = read_passages(group, model.encoder_params, model.memory_params,
                                 variant=model.config.variant,
                                 activation=model.config.activation, collect_trace=True)
    for row, step in zip(rows, trace):
        row["mean_gate_context"] = step.mean_gate_context
        row["mean_gate_answer"] = step.mean_gate_answer
        row["teacher_answer_index"] = best
    return rows


def cmd_generate(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    vocab = Vocab.load(args.vocab)
    if len(vocab) != ckpt.config.vocab_size:
        raise CheckpointError(
            f"vocab size {len(vocab)} does not match checkpoint ({ckpt.config.vocab_size})")
    records = read_records_jsonl(args.data)
    gen = GenerationConfig(
        max_len=args.max_len or ckpt.config.n_a,
        beam_width=args.beam,
        length_norm=args.length_norm,
    )
    use_beam = not args.greedy
    payloads = [(ckpt.model, vocab, gen, use_beam, args.trace, r) for r in records]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(_generate_one, payloads))
    else:
        rows = [_generate_one(p) for p in payloads]
    _write_jsonl(Path(args.out), rows)
    print(f"generated {len(rows)} answers to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    predictions = read_predictions(args.predictions)
    if not predictions:
        raise ValueError(f"predictions file {args.predictions} is empty")
    gold = read_gold(args.gold)
    means, rows = evaluate_texts(predictions, gold)
    if args.out:
        Path(args.out).write_text(report_csv(means), encoding="utf-8")
    if args.per_sample:
        _write_jsonl(Path(args.per_sample), rows)
    print(report_table(means, len(rows)), end="")
    return EXIT_OK


def cmd_baseline(args) -> int:
    raw = read_raw_jsonl(args.input)
    rng = np.random.default_rng(args.seed)
    if args.kind == "retrieval":
        if args.checkpoint:
            ckpt = load_checkpoint(args.checkpoint)
            vocab = Vocab.load(args.vocab)
            embedder = mean_embedding_embedder(ckpt.model, vocab)
        elif args.vocab:
            embedder = bag_of_words_embedder(Vocab.load(args.vocab))
        else:
            raise ValueError("retrieval baseline needs --checkpoint (+--vocab) or --vocab")
    rows = []
    for r in raw:
        reviews = r.get("review_snippets", [])
        if args.kind == "random":
            text = random_sentence_baseline(reviews, rng)
        else:
            text = retrieval_sentence_baseline(r.get("question_text", ""), reviews, embedder)
        rows.append({"question_id": r.get("id"), "generated_text": text, "beam_scores": []})
    _write_jsonl(Path(args.out), rows)
    print(f"wrote {len(rows)} baseline answers to {args.out}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memqa",
        description="Multi-passage generative QA with cross-passage gated memories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a deterministic synthetic corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=32, help="number of questions")
    p.add_argument("--k", type=int, default=5, help="passages per question")
    p.add_argument("--vocab-size", type=int, default=64)
    p.add_argument("--task", choices=TASKS, default="mixed")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("prepare", help="filter raw JSONL and emit token-id records")
    p.add_argument("--input", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--vocab-size", type=int, default=30000)
    p.add_argument("--n-q", type=int, default=40)
    p.add_argument("--n-r", type=int, default=124)
    p.add_argument("--n-a", type=int, default=82)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train a model on prepared records")
    p.add_argument("--data", required=True, help="records.jsonl from prepare")
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--metrics", help="CSV path for step,lr,loss,grad_norm")
    p.add_argument("--config", help="JSON file with ModelConfig fields")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--d", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--ff-size", type=int)
    p.add_argument("--n-q", type=int)
    p.add_argument("--n-r", type=int)
    p.add_argument("--n-a", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--variant", choices=("full", "chime_c", "chime_a"))
    p.add_argument("--peak-lr", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--total-steps", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--precision", choices=("float32", "float64"))
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="decode answers for prepared records")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--greedy", action="store_true", help="greedy instead of beam search")
    group.add_argument("--beam", type=int, default=3, help="beam width (default 3)")
    p.add_argument("--max-len", type=int)
    p.add_argument("--length-norm", type=float, default=1.0)
    p.add_argument("--trace", action="store_true",
                   help="emit per-passage intermediate answers and mean gate values")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="score predictions against gold answers")
    p.add_argument("--predictions", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", help="CSV report path")
    p.add_argument("--per-sample", help="JSONL of per-sample scores")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("baseline", help="heuristic baselines over raw records")
    p.add_argument("--kind", choices=("random", "retrieval"), required=True)
    p.add_argument("--input", required=True, help="raw JSONL")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--checkpoint", help="embedder source for retrieval")
    p.add_argument("--vocab")
    p.set_defaults(fn=cmd_baseline)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING_FILE, "missing_file", str(exc))
    except CheckpointError as exc:
        return _fail(EXIT_CHECKPOINT, "checkpoint_mismatch", str(exc))
    except ParseError as exc:
        return _fail(EXIT_PARSE, "parse_error", str(exc))
    except (ValueError, KeyError) as exc:
        return _fail(EXIT_ERROR, "invalid_input", str(exc))


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
