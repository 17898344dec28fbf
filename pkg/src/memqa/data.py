"""Record ingestion, filtering, best-answer selection, and triple assembly.

A raw record is one JSON object per line with fields question_text,
review_snippets (list of strings), answers (list of {text,
helpful_votes: [v_plus, v_total]}), is_answerable (bool) and
question_type (string). Filtering turns it into a token-id QARecord;
assembly turns (question, passage, answer) into the fixed-length arrays
the encoder consumes:

    Part 1 = [CLS] question [SEP] passage      (padded to n_part1)
    Part 2 = [SEP] answer [SEP]                (padded to n_part2)

The separator that would close Part 1 is moved to open Part 2, which makes
it the generation start token. Targets are the Part-2 tokens shifted left
by one; pad positions are masked out of both attention and the loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .vocab import CLS_ID, PAD_ID, SEP_ID, Vocab, strip_urls, tokenize


class ParseError(ValueError):
    """A raw record line could not be parsed."""


@dataclass
class DataConfig:
    """Token caps and passage count used by filtering and assembly."""

    n_q: int = 40
    n_r: int = 124
    n_a: int = 82
    k_passages: int = 10

    @property
    def n_part1(self) -> int:
        # [CLS] + question + [SEP] + passage
        return 2 + self.n_q + self.n_r

    @property
    def n_part2(self) -> int:
        # [SEP] + answer + [SEP]
        return 2 + self.n_a


@dataclass
class QARecord:
    """One question with its K passages, candidate answers and votes (token ids)."""

    question: list[int]
    passages: list[list[int]]
    answers: list[list[int]]
    votes: list[tuple[int, int]]
    answerable: bool = True
    is_descriptive: bool = True
    qid: str = ""


@dataclass(frozen=True)
class InstanceTensors:
    """Model-ready arrays for one (question, passage, answer) triple."""

    token_ids: np.ndarray      # (n_part1 + n_part2,) int64
    segment_ids: np.ndarray    # 0 = segment A, 1 = segment B
    position_ids: np.ndarray
    pad_mask: np.ndarray       # 1 for real tokens, 0 for [PAD]
    n_part1: int
    n_part2: int
    target_ids: np.ndarray     # (n_part2,) next-token targets for Part 2
    target_mask: np.ndarray    # (n_part2,) 1 where the target is scored
    attn_allow: np.ndarray     # (n_x, n_x) attention permissions, cached at assembly

    def validate(self) -> None:
        n_x = self.n_part1 + self.n_part2
        if self.token_ids.shape != (n_x,):
            raise ValueError("token_ids length must equal n_part1 + n_part2")
        for arr in (self.segment_ids, self.position_ids, self.pad_mask):
            if arr.shape != (n_x,):
                raise ValueError("per-position arrays must all have length n_x")
        if self.token_ids[self.n_part1] != SEP_ID:
            raise ValueError("Part 2 must begin with [SEP]")
        if self.target_ids.shape != (self.n_part2,) or self.target_mask.shape != (self.n_part2,):
            raise ValueError("targets must align to Part 2")
        if self.attn_allow.shape != (n_x, n_x):
            raise ValueError("attn_allow must be (n_x, n_x)")


def select_best_answer(votes: list[tuple[int, int]]) -> int:
    """Index of the answer with the highest positive-vote rate.

    Rates are compared exactly by cross-multiplication; ties go to the
    larger vote total, then the lowest index. v_total == 0 counts as rate 0.
    """
    if not votes:
        raise ValueError("need at least one answer")
    best = 0
    for i, (plus, total) in enumerate(votes):
        if not 0 <= plus <= total:
            raise ValueError(f"votes must satisfy 0 <= v_plus <= v_total, got ({plus}, {total})")
        if i == 0:
            continue
        b_plus, b_total = votes[best]
        # plus/total > b_plus/b_total, with 0-total treated as 0/1
        lhs = plus * max(b_total, 1)
        rhs = b_plus * max(total, 1)
        if lhs > rhs or (lhs == rhs and total > b_total):
            best = i
    return best


def filter_record(raw: dict, vocab: Vocab, config: DataConfig) -> tuple[QARecord | None, str | None]:
    """Apply the corpus filters and tokenize; returns (record, None) or (None, reason).

    Keeps answerable descriptive questions with exactly k_passages passages,
    strips URLs, and truncates to the token caps. Passages keep their given
    order (they arrive pre-ranked by relevance).
    """
    if not raw.get("is_answerable", False):
        return None, "not answerable"
    qtype = str(raw.get("question_type", "")).strip().lower()
    if qtype and qtype != "descriptive":
        return None, "not descriptive"
    passages = raw.get("review_snippets", [])
    if len(passages) != config.k_passages:
        return None, f"passage count {len(passages)} != {config.k_passages}"
    answers = raw.get("answers", [])
    if not answers:
        return None, "no answers"

    def ids(text: str, cap: int) -> list[int]:
        return vocab.encode(tokenize(strip_urls(text))[:cap])

    record = QARecord(
        question=ids(raw.get("question_text", ""), config.n_q),
        passages=[ids(p, config.n_r) for p in passages],
        answers=[ids(a["text"], config.n_a) for a in answers],
        votes=[tuple(a.get("helpful_votes", (0, 0))) for a in answers],
        qid=str(raw.get("id", "")),
    )
    for plus, total in record.votes:
        if not 0 <= plus <= total:
            return None, f"invalid votes ({plus}, {total})"
    if not record.question:
        return None, "empty question"
    return record, None


def assemble_triple(
    question: list[int],
    passage: list[int],
    answer: list[int],
    config: DataConfig,
    close_answer: bool = True,
) -> InstanceTensors:
    """Build the fixed-length instance arrays for one triple.

    With ``close_answer`` (teacher forcing) Part 2 is [SEP] answer [SEP];
    without it (generation mode) the trailing separator is omitted, so an
    empty answer leaves Part 2 as the lone opening [SEP] followed by pads.
    """
    if len(question) > config.n_q:
        raise ValueError(f"question length {len(question)} exceeds cap {config.n_q}")
    if len(passage) > config.n_r:
        raise ValueError(f"passage length {len(passage)} exceeds cap {config.n_r}")
    cap_a = config.n_a if close_answer else config.n_a + 1
    if len(answer) > cap_a:
        raise ValueError(f"answer length {len(answer)} exceeds cap {cap_a}")

    n1, n2 = config.n_part1, config.n_part2
    part1 = [CLS_ID, *question, SEP_ID, *passage]
    part2 = [SEP_ID, *answer] + ([SEP_ID] if answer and close_answer else [])
    seg1 = [0] * (2 + len(question)) + [1] * len(passage)

    tokens = np.full(n1 + n2, PAD_ID, dtype=np.int64)
    segments = np.zeros(n1 + n2, dtype=np.int64)
    pad_mask = np.zeros(n1 + n2, dtype=np.int64)

    tokens[: len(part1)] = part1
    segments[: len(seg1)] = seg1
    pad_mask[: len(part1)] = 1
    tokens[n1 : n1 + len(part2)] = part2
    pad_mask[n1 : n1 + len(part2)] = 1

    targets = np.full(n2, PAD_ID, dtype=np.int64)
    target_mask = np.zeros(n2, dtype=np.int64)
    # position i of Part 2 predicts Part-2 token i+1
    targets[: len(part2) - 1] = part2[1:]
    target_mask[: len(part2) - 1] = 1

    from .encoder import seq2seq_mask

    return InstanceTensors(
        token_ids=tokens,
        segment_ids=segments,
        position_ids=np.arange(n1 + n2, dtype=np.int64),
        pad_mask=pad_mask,
        n_part1=n1,
        n_part2=n2,
        target_ids=targets,
        target_mask=target_mask,
        attn_allow=seq2seq_mask(n1, n2, pad_mask),
    )


def assemble_group(record: QARecord, config: DataConfig) -> list[InstanceTensors]:
    """K instances for one question, all sharing the vote-selected best answer."""
    best = select_best_answer(record.votes)
    answer = record.answers[best]
    return [assemble_triple(record.question, p, answer, config) for p in record.passages]


def record_to_raw(record: QARecord, vocab: Vocab) -> dict:
    """Detokenized raw-format view of a record (used for idempotence checks)."""
    return {
        "id": record.qid,
        "question_text": vocab.decode_text(record.question),
        "review_snippets": [vocab.decode_text(p) for p in record.passages],
        "answers": [
            {"text": vocab.decode_text(a), "helpful_votes": list(v)}
            for a, v in zip(record.answers, record.votes)
        ],
        "is_answerable": record.answerable,
        "question_type": "descriptive" if record.is_descriptive else "yes/no",
    }


# -- file io ----------------------------------------------------------------


def read_raw_jsonl(path: str | Path) -> list[dict]:
    """Parse a raw-record JSONL file; parse failures carry the line number."""
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{line_no}: {exc}") from exc
            if not isinstance(obj, dict):
                raise ParseError(f"{path}:{line_no}: record must be a JSON object")
            obj.setdefault("id", f"line{line_no}")
            records.append(obj)
    return records


def write_records_jsonl(records: list[QARecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(
                json.dumps(
                    {
                        "id": r.qid,
                        "question": r.question,
                        "passages": r.passages,
                        "answers": r.answers,
                        "votes": [list(v) for v in r.votes],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def read_records_jsonl(path: str | Path) -> list[QARecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(
                    QARecord(
                        question=obj["question"],
                        passages=obj["passages"],
                        answers=obj["answers"],
                        votes=[tuple(v) for v in obj["votes"]],
                        qid=obj.get("id", f"line{line_no}"),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}:{line_no}: {exc}") from exc
    return records
