"""Miniature masked transformer encoder.

Token + segment + learned-position embeddings feed a stack of post-norm
blocks (masked multi-head self-attention, then a position-wise
feed-forward, each wrapped in residual + layer norm). The attention mask
makes Part 1 fully bidirectional while Part 2 is left-to-right over itself
but sees all of Part 1; pad columns are forbidden everywhere. Trained from
scratch: no pre-trained weights, no relative-position machinery.

The K instances of one question share shapes, so they encode as a single
(K, N_x, d) batch; the sequential memory chain consumes per-k slices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import InstanceTensors
from .tensor import NumericError, Tensor


@dataclass
class AttentionParams:
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor
    heads: int


@dataclass
class BlockParams:
    attn: AttentionParams
    ln1_gain: Tensor
    ln1_shift: Tensor
    ff_w1: Tensor
    ff_b1: Tensor
    ff_w2: Tensor
    ff_b2: Tensor
    ln2_gain: Tensor
    ln2_shift: Tensor


@dataclass
class EncoderParams:
    token_emb: Tensor      # (V, d)
    segment_emb: Tensor    # (2, d)
    position_emb: Tensor   # (N_x, d)
    blocks: list[BlockParams] = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.token_emb.shape[1]


def seq2seq_mask(n_part1: int, n_part2: int, pad_mask: np.ndarray) -> np.ndarray:
    """Attention-permission matrix: allow[i, j] == 1 iff query i may see key j.

    Part-1 queries see all of Part 1; Part-2 queries see Part 1 plus
    Part-2 positions up to and including themselves. Pad columns are
    forbidden for every query.
    """
    if n_part1 < 1 or n_part2 < 1:
        raise ValueError("both parts must be non-empty")
    n = n_part1 + n_part2
    pad_mask = np.asarray(pad_mask)
    if pad_mask.shape != (n,):
        raise ValueError(f"pad_mask must have length {n}")
    idx = np.arange(n)
    in_p1 = idx < n_part1
    allow = np.zeros((n, n), dtype=np.int64)
    allow[np.ix_(in_p1, in_p1)] = 1
    allow[np.ix_(~in_p1, in_p1)] = 1
    tail = idx[~in_p1]
    allow[np.ix_(~in_p1, ~in_p1)] = (tail[None, :] <= tail[:, None]).astype(np.int64)
    allow *= pad_mask[None, :] != 0
    return allow


def additive_mask(allow: np.ndarray, dtype) -> np.ndarray:
    """0 where allowed, -inf where forbidden; added to attention logits."""
    out = np.zeros(allow.shape, dtype=dtype)
    out[allow == 0] = -np.inf
    return out


def embed(instance: InstanceTensors, params: EncoderParams) -> Tensor:
    """Per-position sum of token, segment and position embeddings."""
    tok = T.embedding(params.token_emb, instance.token_ids)
    seg = T.embedding(params.segment_emb, instance.segment_ids)
    pos = T.embedding(params.position_emb, instance.position_ids)
    return tok + seg + pos


def embed_batch(instances: list[InstanceTensors], params: EncoderParams) -> Tensor:
    tok = T.embedding(params.token_emb, np.stack([i.token_ids for i in instances]))
    seg = T.embedding(params.segment_emb, np.stack([i.segment_ids for i in instances]))
    pos = T.embedding(params.position_emb, np.stack([i.position_ids for i in instances]))
    return tok + seg + pos


def multi_head_attention(
    query: Tensor,
    keyval: Tensor,
    params: AttentionParams,
    mask_add: np.ndarray | None = None,
) -> Tensor:
    """Scaled dot-product attention; queries from ``query``, keys/values from ``keyval``.

    Accepts (S, d) inputs or (K, S, d) batches. ``mask_add`` is an additive
    logit mask broadcastable to (..., heads, S_q, S_k); every query row must
    keep at least one allowed key or the softmax would be over nothing.
    """
    d = query.shape[-1]
    h = params.heads
    if d % h != 0:
        raise ValueError(f"head count {h} must divide model dim {d}")
    dh = d // h
    batched = query.data.ndim == 3
    s_q, s_k = query.shape[-2], keyval.shape[-2]

    def split(x: Tensor, s: int) -> Tensor:
        if batched:
            k = x.shape[0]
            return x.reshape(k, s, h, dh).transpose((0, 2, 1, 3))  # (K, h, s, dh)
        return x.reshape(s, h, dh).transpose((1, 0, 2))            # (h, s, dh)

    q = split(query @ params.wq + params.bq, s_q)
    k = split(keyval @ params.wk + params.bk, s_k)
    v = split(keyval @ params.wv + params.bv, s_k)
    kt = k.transpose((0, 1, 3, 2) if batched else (0, 2, 1))
    logits = (q @ kt) * (1.0 / math.sqrt(dh))
    if mask_add is not None:
        logits = logits + Tensor(mask_add)
    weights = T.softmax(logits, axis=-1)
    ctx = weights @ v
    if batched:
        ctx = ctx.transpose((0, 2, 1, 3)).reshape(query.shape[0], s_q, d)
    else:
        ctx = ctx.transpose((1, 0, 2)).reshape(s_q, d)
    return ctx @ params.wo + params.bo


def feed_forward(x: Tensor, block: BlockParams, activation: str = "gelu") -> Tensor:
    h = x @ block.ff_w1 + block.ff_b1
    h = T.gelu(h) if activation == "gelu" else T.relu(h)
    return h @ block.ff_w2 + block.ff_b2


def encoder_block(
    x: Tensor,
    block: BlockParams,
    mask_add: np.ndarray | None,
    activation: str = "gelu",
    dropout_masks: tuple[np.ndarray, np.ndarray] | None = None,
) -> Tensor:
    a = multi_head_attention(x, x, block.attn, mask_add)
    if dropout_masks is not None:
        a = a * Tensor(dropout_masks[0])
    x = T.layer_norm(x + a, block.ln1_gain, block.ln1_shift)
    f = feed_forward(x, block, activation)
    if dropout_masks is not None:
        f = f * Tensor(dropout_masks[1])
    return T.layer_norm(x + f, block.ln2_gain, block.ln2_shift)


def encode_batch(
    instances: list[InstanceTensors],
    params: EncoderParams,
    activation: str = "gelu",
    dropout_masks: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> Tensor:
    """Hidden states (K, N_x, d) for K same-shape instances.

    With zero blocks the output is the raw embedding sum. Pad rows are
    blanked to zero on the way out: the residual stream would otherwise
    carry pad-token content into them, and the memory stage mixes rows
    across instances whose pad extents differ, so any non-constant pad row
    would leak pad content into real positions. Raises NumericError naming
    the offending block if activations go non-finite.
    """
    x = embed_batch(instances, params)
    dtype = x.data.dtype
    if params.blocks:
        # (K, 1, N, N): per-instance mask broadcast over heads
        mask_add = np.stack([additive_mask(i.attn_allow, dtype) for i in instances])[:, None]
        for bi, block in enumerate(params.blocks):
            masks = dropout_masks[bi] if dropout_masks is not None else None
            x = encoder_block(x, block, mask_add, activation, masks)
            if not np.isfinite(x.data).all():
                raise NumericError(f"non-finite activations leaving encoder block {bi}")
    keep = np.stack([i.pad_mask for i in instances]).astype(dtype)[:, :, None]
    return x * Tensor(keep)


def encode(
    instance: InstanceTensors,
    params: EncoderParams,
    activation: str = "gelu",
    dropout_masks: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> tuple[Tensor, Tensor]:
    """Hidden states for one instance, split into (H_part1, H_part2)."""
    h = encode_batch([instance], params, activation, dropout_masks)[0]
    n1 = instance.n_part1
    return h[:n1], h[n1:]
