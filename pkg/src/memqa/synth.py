"""Deterministic synthetic corpora for desk-scale experiments.

Two task families, both solvable only from the passages:

* key-lookup: exactly one passage contains "key <k> val <v>"; the gold
  answer is <v>. Other passages hold distractor words and decoy key/val
  pairs for different keys.
* majority-opinion: every passage asserts "opinion yes" or "opinion no"
  with a strict majority; the gold answer is the majority label. Mirrors
  contradictory reviews: no single passage settles the question.

Records come out in the same raw-dict shape as real corpus JSONL, so they
flow through the normal filter/assemble pipeline. The gold answer always
carries the best vote rate; decoy answers get worse votes.
"""

from __future__ import annotations

import random

from .data import DataConfig, QARecord, filter_record
from .vocab import RESERVED, Vocab, build_vocab

KEY_TASK = "key"
MAJORITY_TASK = "majority"
MIXED_TASK = "mixed"
TASKS = (KEY_TASK, MAJORITY_TASK, MIXED_TASK)

_STRUCTURE_WORDS = ("key", "val", "opinion", "yes", "no", "find", "what", "is", "the", "?")


def word_pool(vocab_size: int) -> list[str]:
    """Filler words sized so the full token universe fits in vocab_size."""
    n_fill = vocab_size - len(RESERVED) - len(_STRUCTURE_WORDS)
    if n_fill < 4:
        raise ValueError(f"vocab_size {vocab_size} too small; need at least "
                         f"{len(RESERVED) + len(_STRUCTURE_WORDS) + 4}")
    return [f"w{i}" for i in range(n_fill)]


def gen_synthetic_raw(
    seed: int,
    n_questions: int,
    k_passages: int,
    vocab_size: int,
    task: str = MIXED_TASK,
    passage_len: int = 10,
) -> list[dict]:
    """Raw-dict records, byte-identical for a given parameter set."""
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")
    if k_passages < 1:
        raise ValueError("k_passages must be at least 1")
    if n_questions < 1:
        raise ValueError("n_questions must be at least 1")
    pool = word_pool(vocab_size)
    rng = random.Random(seed)
    records = []
    for qi in range(n_questions):
        if task == MIXED_TASK:
            family = KEY_TASK if qi % 2 == 0 else MAJORITY_TASK
        else:
            family = task
        if family == KEY_TASK:
            records.append(_key_record(rng, qi, k_passages, pool, passage_len))
        else:
            records.append(_majority_record(rng, qi, k_passages, pool, passage_len))
    return records


def _filler(rng: random.Random, pool: list[str], n: int) -> list[str]:
    return [rng.choice(pool) for _ in range(max(0, n))]


def _wrap(rng: random.Random, qi: int, question: str, passages: list[str], gold: str,
          pool: list[str]) -> dict:
    decoy = " ".join(_filler(rng, pool, 2))
    answers = [
        {"text": gold, "helpful_votes": [4, 4]},
        {"text": decoy, "helpful_votes": [1, 3]},
    ]
    return {
        "id": f"q{qi:05d}",
        "question_text": question,
        "review_snippets": passages,
        "answers": answers,
        "is_answerable": True,
        "question_type": "descriptive",
    }


def _key_record(rng: random.Random, qi: int, k: int, pool: list[str], plen: int) -> dict:
    key, value = rng.sample(pool, 2)
    hot = rng.randrange(k)
    passages = []
    for p in range(k):
        words = _filler(rng, pool, plen - 4)
        if p == hot:
            core = ["key", key, "val", value]
        else:
            decoy_key, decoy_val = rng.sample([w for w in pool if w != key], 2)
            core = ["key", decoy_key, "val", decoy_val]
        at = rng.randrange(len(words) + 1)
        passages.append(" ".join(words[:at] + core + words[at:]))
    question = f"find val key {key}"
    return _wrap(rng, qi, question, passages, value, pool)


def _majority_record(rng: random.Random, qi: int, k: int, pool: list[str], plen: int) -> dict:
    majority = rng.choice(["yes", "no"])
    minority = "no" if majority == "yes" else "yes"
    n_major = rng.randint(k // 2 + 1, k)
    labels = [majority] * n_major + [minority] * (k - n_major)
    rng.shuffle(labels)
    passages = []
    for lab in labels:
        words = _filler(rng, pool, plen - 2)
        at = rng.randrange(len(words) + 1)
        passages.append(" ".join(words[:at] + ["opinion", lab] + words[at:]))
    question = "what is the opinion ?"
    return _wrap(rng, qi, question, passages, majority, pool)


def synthetic_corpus_texts(records: list[dict]) -> list[str]:
    texts = []
    for r in records:
        texts.append(r["question_text"])
        texts.extend(r["review_snippets"])
        texts.extend(a["text"] for a in r["answers"])
    return texts


def gen_synthetic(
    seed: int,
    n_questions: int,
    k_passages: int,
    vocab_size: int,
    task: str = MIXED_TASK,
    config: DataConfig | None = None,
) -> tuple[list[QARecord], Vocab]:
    """Filtered token-id records plus the vocabulary that encodes them."""
    raw = gen_synthetic_raw(seed, n_questions, k_passages, vocab_size, task)
    vocab = build_vocab(synthetic_corpus_texts(raw), vocab_size)
    config = config or synthetic_data_config(k_passages)
    records = []
    for r in raw:
        rec, reason = filter_record(r, vocab, config)
        if rec is None:  # pragma: no cover - generator emits only valid records
            raise AssertionError(f"synthetic record rejected: {reason}")
        records.append(rec)
    return records, vocab


def synthetic_data_config(k_passages: int, passage_len: int = 10) -> DataConfig:
    """Caps sized for the synthetic templates (questions <= 6, answers <= 4)."""
    return DataConfig(n_q=6, n_r=passage_len + 4, n_a=4, k_passages=k_passages)
