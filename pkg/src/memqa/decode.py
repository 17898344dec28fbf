"""Autoregressive generation: per-step distributions, greedy and beam search.

Each emitted token triggers a full K-passage read with the partial answer
teacher-forced into Part 2; the next-token distribution is the softmax row
at the last real Part-2 position. The answer-causality invariants make
that row independent of the pad tail, so incremental decoding agrees
exactly with the training-time forward.

Beam search is *nested*: selection walks level by level, level v adding
the best remaining child among parents visible to levels <= v, so the
width-w live set extends the width-(w-1) live set by at most one
hypothesis per step. Explored sets therefore grow with width, making the
best returned score monotone in width — a guarantee plain top-w pruning
does not give — and at full width the search becomes exhaustive
enumeration. Model calls per step match plain beam search.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import assemble_triple
from .memory import read_passages
from .model import Model, project_vocab
from .vocab import SEP_ID


@dataclass
class GenerationConfig:
    max_len: int = 82           # answer-body token cap
    beam_width: int = 3
    length_norm: float = 1.0    # score = logprob / emitted_tokens**length_norm

    def __post_init__(self):
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")
        if self.beam_width < 1:
            raise ValueError("beam_width must be at least 1")


def step_distribution(
    model: Model,
    question: list[int],
    passages: list[list[int]],
    partial: list[int],
) -> np.ndarray:
    """Next-token probabilities given the question, passages and a partial answer."""
    cfg = model.config
    if len(partial) > cfg.n_a:
        raise ValueError(f"partial answer length {len(partial)} exceeds cap {cfg.n_a}")
    dc = cfg.data_config
    with T.no_grad():
        instances = [
            assemble_triple(question, p, list(partial), dc, close_answer=False)
            for p in passages
        ]
        state, _ = read_passages(
            instances, model.encoder_params, model.memory_params,
            variant=cfg.variant, activation=cfg.activation,
        )
        logits = project_vocab(state.m_answer, model.params["dec.w"], model.params["dec.b"])
        probs = T.softmax(logits[len(partial)], axis=-1)
    return probs.data


def greedy_decode(
    model: Model,
    question: list[int],
    passages: list[list[int]],
    gen: GenerationConfig,
) -> list[int]:
    """Argmax decoding until [SEP] or the length cap; ties go to the lowest id."""
    max_len = min(gen.max_len, model.config.n_a)
    out: list[int] = []
    while len(out) < max_len:
        dist = step_distribution(model, question, passages, out)
        nxt = int(dist.argmax())
        if nxt == SEP_ID:
            break
        out.append(nxt)
    return out


@dataclass(frozen=True)
class Hypothesis:
    tokens: tuple[int, ...]     # answer body, closing [SEP] excluded
    emissions: tuple[int, ...]  # every emitted token, [SEP] included
    logprob: float
    finished: bool
    score: float

    @property
    def sort_key(self) -> tuple:
        # emissions as tie-break keeps beam argmax consistent with greedy's
        # lowest-token-id rule and gives a deterministic total order
        return (-self.score, self.emissions)


def _child(parent: Hypothesis, tok: int, logp: float, max_len: int, norm: float) -> Hypothesis:
    logprob = parent.logprob + logp
    emissions = parent.emissions + (tok,)
    if tok == SEP_ID:
        tokens, finished = parent.tokens, True
    else:
        tokens = parent.tokens + (tok,)
        finished = len(tokens) >= max_len
    return Hypothesis(tokens, emissions, logprob, finished, logprob / len(emissions) ** norm)


def beam_decode(
    model: Model,
    question: list[int],
    passages: list[list[int]],
    gen: GenerationConfig,
) -> tuple[list[int], list[tuple[list[int], float]]]:
    """Length-normalized nested beam search.

    Returns the best finished sequence plus the top-width finished
    (sequence, score) pairs in non-increasing score order. Width 1
    reproduces greedy decoding exactly.
    """
    max_len = min(gen.max_len, model.config.n_a)
    width = gen.beam_width

    lives = [Hypothesis((), (), 0.0, False, 0.0)]
    finished: list[Hypothesis] = []

    for _ in range(max_len):
        if not lives:
            break
        children: list[list[Hypothesis]] = []
        for parent in lives:
            dist = step_distribution(model, question, passages, list(parent.tokens))
            logs = np.log(np.maximum(dist, 1e-300))
            kids = [
                _child(parent, tok, float(logs[tok]), max_len, gen.length_norm)
                for tok in range(len(dist))
            ]
            kids.sort(key=lambda h: h.sort_key)
            children.append(kids)

        cursors = [0] * len(lives)
        heap: list[tuple[tuple, int]] = []
        selected: list[Hypothesis] = []
        for level in range(width):
            if level < len(lives):
                heapq.heappush(heap, (children[level][0].sort_key, level))
                cursors[level] = 1
            if not heap:
                break
            _, pi = heapq.heappop(heap)
            selected.append(children[pi][cursors[pi] - 1])
            if cursors[pi] < len(children[pi]):
                heapq.heappush(heap, (children[pi][cursors[pi]].sort_key, pi))
                cursors[pi] += 1
        lives = []
        for hyp in selected:
            (finished if hyp.finished else lives).append(hyp)

    finished.sort(key=lambda h: h.sort_key)
    best = finished[0]
    beams = [(list(h.tokens), h.score) for h in finished[:width]]
    return list(best.tokens), beams
