"""Heuristic answer baselines: random sentence and similarity retrieval.

Both operate on raw review text. The retrieval baseline scores sentences
by cosine similarity against the question under any supplied embedding
callable; the packaged default embeds a sentence as the mean of a trained
model's token-embedding rows (a bag-of-words count embedder is available
when no trained model exists).
"""

from __future__ import annotations

import re
import warnings

import numpy as np

from .model import Model
from .vocab import Vocab, tokenize

_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+")
MAX_BASELINE_TOKENS = 120


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_RE.split(text) if s.strip()]


def _truncate(sentence: str) -> str:
    words = sentence.split()
    return " ".join(words[:MAX_BASELINE_TOKENS])


def all_sentences(reviews: list[str]) -> list[str]:
    out = []
    for review in reviews:
        out.extend(split_sentences(review))
    return out


def random_sentence_baseline(reviews: list[str], rng: np.random.Generator) -> str:
    """Uniform pick over every sentence of every review, capped at 120 tokens."""
    sentences = all_sentences(reviews)
    if not sentences:
        warnings.warn("no sentences to sample from; returning empty answer", stacklevel=2)
        return ""
    return _truncate(sentences[int(rng.integers(len(sentences)))])


def retrieval_sentence_baseline(question: str, reviews: list[str], embedder) -> str:
    """Sentence with the highest cosine similarity to the question; first wins ties.

    ``embedder`` maps a string to a 1-d vector; zero vectors get similarity -1.
    """
    sentences = all_sentences(reviews)
    if not sentences:
        warnings.warn("no sentences to retrieve from; returning empty answer", stacklevel=2)
        return ""
    q = np.asarray(embedder(question), dtype=np.float64)
    qn = float(np.linalg.norm(q))
    best_idx, best_sim = 0, -np.inf
    for i, sent in enumerate(sentences):
        v = np.asarray(embedder(sent), dtype=np.float64)
        vn = float(np.linalg.norm(v))
        sim = -1.0 if qn == 0.0 or vn == 0.0 else float(q @ v) / (qn * vn)
        if sim > best_sim:
            best_idx, best_sim = i, sim
    return _truncate(sentences[best_idx])


def mean_embedding_embedder(model: Model, vocab: Vocab):
    """Embed a sentence as the mean of the model's token-embedding rows."""
    table = model.params["emb.token"].data

    def embed(text: str) -> np.ndarray:
        ids = vocab.encode(tokenize(text))
        if not ids:
            return np.zeros(table.shape[1])
        return table[ids].mean(axis=0)

    return embed


def bag_of_words_embedder(vocab: Vocab):
    """Model-free count vector over the vocabulary."""

    def embed(text: str) -> np.ndarray:
        vec = np.zeros(len(vocab))
        for i in vocab.encode(tokenize(text)):
            vec[i] += 1.0
        return vec

    return embed
