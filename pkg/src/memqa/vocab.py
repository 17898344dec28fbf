"""Whitespace/punctuation tokenizer and a frequency-ranked vocabulary.

Reserved ids are fixed: [PAD]=0, [CLS]=1, [SEP]=2, [UNK]=3. The rest of
the table is filled by corpus frequency (ties broken alphabetically), so
building is deterministic for a given corpus.
"""

from __future__ import annotations

import re
from collections import Counter
from pathlib import Path

PAD, CLS, SEP, UNK = "[PAD]", "[CLS]", "[SEP]", "[UNK]"
RESERVED = (PAD, CLS, SEP, UNK)
PAD_ID, CLS_ID, SEP_ID, UNK_ID = 0, 1, 2, 3

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_URL_RE = re.compile(r"(?:https?://|www\.)\S+", re.IGNORECASE)


def strip_urls(text: str) -> str:
    return _URL_RE.sub(" ", text)


def tokenize(text: str) -> list[str]:
    """Lowercased word/punctuation tokens. Idempotent on its own output."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


class Vocab:
    """token <-> id bijection with stable reserved ids."""

    def __init__(self, tokens: list[str]):
        if list(tokens[: len(RESERVED)]) != list(RESERVED):
            raise ValueError("vocabulary must start with the reserved tokens")
        self.id_to_token = list(tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(tokens)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate token in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode(self, tokens: list[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def encode_text(self, text: str) -> list[int]:
        return self.encode(tokenize(text))

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def decode_text(self, ids: list[int]) -> str:
        return detokenize(self.decode(ids))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.id_to_token):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        tokens: list[str] = []
        with open(path, encoding="utf-8") as f:
            for line_no, line in enumerate(f):
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, _, idx = line.partition("\t")
                if int(idx) != len(tokens):
                    raise ValueError(f"{path}:{line_no + 1}: ids must be contiguous")
                tokens.append(tok)
        return cls(tokens)


def build_vocab(corpus: list[str], max_size: int) -> Vocab:
    """Frequency-ranked vocabulary over tokenized ``corpus`` texts."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    if max_size < len(RESERVED):
        raise ValueError(f"max_size must be at least {len(RESERVED)}")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - len(RESERVED)]]
    return Vocab(list(RESERVED) + keep)
