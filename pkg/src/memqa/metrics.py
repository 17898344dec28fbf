"""Lexical evaluation: BLEU-1/2, ROUGE-L F1, and corpus-level reports.

BLEU uses modified n-gram precision (candidate counts clipped by the
maximum count over all references), a geometric mean over orders 1..n,
and the brevity penalty exp(1 - r/c) for c < r with r the reference
length closest to c. ROUGE-L is the LCS-based F1 (beta = 1), aggregated
by max over references. Both live on tokenized inputs and return values
in [0, 1].
"""

from __future__ import annotations

import json
import math
import warnings
from collections import Counter
from pathlib import Path


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu_n(candidate: list[str], references: list[list[str]], n: int) -> float:
    """BLEU up to order ``n`` (1 or 2) with multi-reference clipping."""
    if n not in (1, 2):
        raise ValueError(f"n must be 1 or 2, got {n}")
    if not references or all(not r for r in references):
        raise ValueError("need at least one non-empty reference")
    if not candidate:
        warnings.warn("empty candidate scores 0", stacklevel=2)
        return 0.0

    precisions = []
    for order in range(1, n + 1):
        cand_counts = _ngrams(candidate, order)
        total = sum(cand_counts.values())
        if total == 0:
            continue  # candidate shorter than the order; skip it, as for a 1-token BLEU-2
        max_ref: Counter = Counter()
        for ref in references:
            for gram, count in _ngrams(ref, order).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        clipped = sum(min(count, max_ref[gram]) for gram, count in cand_counts.items())
        precisions.append(clipped / total)
    if not precisions or any(p == 0.0 for p in precisions):
        return 0.0
    geo = math.exp(sum(math.log(p) for p in precisions) / len(precisions))

    c = len(candidate)
    r = min((abs(len(ref) - c), len(ref)) for ref in references)[1]
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * geo


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_f1(candidate: list[str], references: list[list[str]]) -> float:
    """Max over references of the LCS F1 score."""
    if not candidate or not references or all(not r for r in references):
        warnings.warn("empty candidate or references score 0", stacklevel=2)
        return 0.0
    best = 0.0
    for ref in references:
        if not ref:
            continue
        lcs = _lcs_length(candidate, ref)
        if lcs == 0:
            continue
        precision = lcs / len(candidate)
        recall = lcs / len(ref)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


# -- corpus evaluation --------------------------------------------------------

METRIC_NAMES = ("bleu_1", "bleu_2", "rouge_l_f1")

REPORT_NOTES = (
    "bleu uses native multi-reference clipping; rouge-l takes the max over references",
    "scores are means over samples, reported in [0,1]; table column x100 mirrors the usual convention",
)


def score_pair(candidate: list[str], references: list[list[str]]) -> dict[str, float]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return {
            "bleu_1": bleu_n(candidate, references, 1) if candidate else 0.0,
            "bleu_2": bleu_n(candidate, references, 2) if candidate else 0.0,
            "rouge_l_f1": rouge_l_f1(candidate, references),
        }


def evaluate_texts(
    predictions: dict[str, str],
    gold: dict[str, list[str]],
) -> tuple[dict[str, float], list[dict]]:
    """Corpus means plus per-sample rows; ids must match exactly."""
    if not predictions:
        raise ValueError("no predictions to evaluate")
    missing = sorted(set(gold) - set(predictions))
    extra = sorted(set(predictions) - set(gold))
    if missing or extra:
        raise ValueError(
            f"id mismatch: missing predictions for {missing[:10]}, "
            f"unmatched predictions {extra[:10]}")
    rows = []
    for qid in sorted(predictions):
        cand = predictions[qid].split()
        refs = [g.split() for g in gold[qid]]
        row = {"id": qid, **score_pair(cand, refs)}
        rows.append(row)
    means = {m: sum(r[m] for r in rows) / len(rows) for m in METRIC_NAMES}
    return means, rows


def read_predictions(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            key = obj["id"] if "id" in obj else obj["question_id"]
            out[str(key)] = obj.get("text", obj.get("generated_text", ""))
    return out


def read_gold(path: str | Path) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            texts = obj["texts"] if "texts" in obj else [obj["text"]]
            out[str(obj["id"])] = [str(t) for t in texts]
    return out


def report_csv(means: dict[str, float]) -> str:
    lines = [f"# {note}" for note in REPORT_NOTES]
    lines.append("metric,mean")
    lines.extend(f"{m},{means[m]:.6f}" for m in METRIC_NAMES)
    return "\n".join(lines) + "\n"


def report_table(means: dict[str, float], n_samples: int) -> str:
    width = max(len(m) for m in METRIC_NAMES)
    lines = [f"samples evaluated: {n_samples}"]
    lines.extend(f"# {note}" for note in REPORT_NOTES)
    lines.append(f"{'metric'.ljust(width)}  {'mean':>8}  {'x100':>8}")
    for m in METRIC_NAMES:
        lines.append(f"{m.ljust(width)}  {means[m]:8.4f}  {100 * means[m]:8.3f}")
    return "\n".join(lines) + "\n"
