"""Cross-passage dual memories: sequential reading with gated convex updates.

After encoding passage k into hidden states (H_c over Part 1, H_a over
Part 2), the context memory absorbs H_c, then the answer memory is
refreshed from H_a through the *newly updated* context memory:

    Z_c = cross_attend(M_c_prev, H_c)        G_c = sigmoid(M_c_prev W1 + Z_c W2 + b)
    M_c = G_c * M_c_prev + (1 - G_c) * H_c   (gate keeps the old memory)

    Z_a = cross_attend(H_a, M_c)             G_a = sigmoid(H_a W1 + Z_a W2 + b)
    M_a = G_a * H_a + (1 - G_a) * M_a_prev   (gate keeps the new states)

The two gate orientations are deliberately opposite. Both memories start
as the first passage's hidden states. One parameter set is shared across
all k, so K is a runtime choice.

Ablations: "chime_c" drops the context memory (Z_a attends to the current
H_c instead); "chime_a" drops the answer memory and its gate, decoding
straight from Z_a of the last passage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import InstanceTensors
from .encoder import BlockParams, EncoderParams, encode_batch, feed_forward, multi_head_attention
from .tensor import Tensor

VARIANT_FULL = "full"
VARIANT_NO_CONTEXT = "chime_c"   # answer memory only
VARIANT_NO_ANSWER = "chime_a"    # context memory only
VARIANTS = (VARIANT_FULL, VARIANT_NO_CONTEXT, VARIANT_NO_ANSWER)


@dataclass
class GateParams:
    w_prev: Tensor  # multiplies the recurrent operand
    w_z: Tensor     # multiplies the cross-attention summary
    bias: Tensor


@dataclass
class MemoryParams:
    """One-block cross-attention encoders plus the two forget gates.

    Fields are None when the variant removes them: context_block and
    context_gate for "chime_c", answer_gate for "chime_a".
    """

    context_block: BlockParams | None
    context_gate: GateParams | None
    answer_block: BlockParams
    answer_gate: GateParams | None


@dataclass
class MemoryState:
    m_context: Tensor | None  # (N_S1, d)
    m_answer: Tensor          # (N_S2, d); for "chime_a" this is Z_a of the last passage
    passages_read: int


@dataclass
class StepTrace:
    k: int
    m_answer: Tensor
    mean_gate_context: float | None
    mean_gate_answer: float | None


def cross_attend(
    query: Tensor,
    keyval: Tensor,
    block: BlockParams,
    kv_pad_mask: np.ndarray | None = None,
    activation: str = "gelu",
) -> Tensor:
    """One transformer block with queries and keys/values from different streams."""
    mask_add = None
    if kv_pad_mask is not None:
        mask_add = np.zeros((query.shape[0], keyval.shape[0]), dtype=query.data.dtype)
        mask_add[:, np.asarray(kv_pad_mask) == 0] = -np.inf
    a = multi_head_attention(query, keyval, block.attn, mask_add)
    x = T.layer_norm(query + a, block.ln1_gain, block.ln1_shift)
    f = feed_forward(x, block, activation)
    return T.layer_norm(x + f, block.ln2_gain, block.ln2_shift)


def gate(a: Tensor, b: Tensor, params: GateParams) -> Tensor:
    """Position-wise sigmoid gate over two (S, d) operands, entries in (0, 1).

    Float sigmoid saturates to exactly 0/1 near |logit| ~ 37; the output is
    clamped one ulp-scale inside so the convex mix always keeps a trace of
    both sources (the gradient there is ~0 either way).
    """
    g = T.sigmoid(a @ params.w_prev + b @ params.w_z + params.bias)
    np.clip(g.data, 1e-12, 1.0 - 1e-12, out=g.data)
    return g


def update_context(
    m_prev: Tensor,
    h_context: Tensor,
    params: MemoryParams,
    kv_pad_mask: np.ndarray | None = None,
    activation: str = "gelu",
) -> tuple[Tensor, Tensor]:
    """Convex mix of retained memory and current context states; returns (M_c, G_c)."""
    if m_prev.shape != h_context.shape:
        raise ValueError(f"shape mismatch: {m_prev.shape} vs {h_context.shape}")
    z = cross_attend(m_prev, h_context, params.context_block, kv_pad_mask, activation)
    g = gate(m_prev, z, params.context_gate)
    return g * m_prev + (1.0 - g) * h_context, g


def update_answer(
    m_prev: Tensor,
    h_answer: Tensor,
    context: Tensor,
    params: MemoryParams,
    kv_pad_mask: np.ndarray | None = None,
    activation: str = "gelu",
) -> tuple[Tensor, Tensor]:
    """Convex mix where the gate weights the *new* answer states; returns (M_a, G_a).

    ``context`` is the freshly updated context memory, or the current
    context hidden states under the "chime_c" ablation.
    """
    if m_prev.shape != h_answer.shape:
        raise ValueError(f"shape mismatch: {m_prev.shape} vs {h_answer.shape}")
    z = cross_attend(h_answer, context, params.answer_block, kv_pad_mask, activation)
    g = gate(h_answer, z, params.answer_gate)
    return g * h_answer + (1.0 - g) * m_prev, g


def read_passages(
    instances: list[InstanceTensors],
    enc_params: EncoderParams,
    mem_params: MemoryParams,
    variant: str = VARIANT_FULL,
    activation: str = "gelu",
    collect_trace: bool = False,
    dropout_masks=None,
) -> tuple[MemoryState, list[StepTrace]]:
    """Sequentially read K assembled instances and return the final memories.

    All instances must share the same Part 2 (the answer under teacher
    forcing, or the partial answer during generation). With K == 1 the
    returned memories are exactly the encoder hidden states (no update is
    applied); decoding from them matches decoding from the encoder output.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if not instances:
        raise ValueError("need at least one passage")

    trace: list[StepTrace] = []
    m_c: Tensor | None = None
    m_a: Tensor | None = None
    h_a_last: Tensor | None = None
    hidden = encode_batch(instances, enc_params, activation, dropout_masks)
    n1 = instances[0].n_part1
    for k, inst in enumerate(instances, start=1):
        h_c, h_a = hidden[k - 1, :n1], hidden[k - 1, n1:]
        part1_pads = inst.pad_mask[: inst.n_part1]
        h_a_last = h_a
        g_c_mean: float | None = None
        g_a_mean: float | None = None
        if k == 1:
            if variant != VARIANT_NO_CONTEXT:
                m_c = h_c
            if variant != VARIANT_NO_ANSWER:
                m_a = h_a
        else:
            if variant == VARIANT_NO_CONTEXT:
                context = h_c
                ctx_pads = part1_pads
            else:
                m_c, g_c = update_context(m_c, h_c, mem_params, part1_pads, activation)
                context = m_c
                ctx_pads = None  # memory rows are zero-or-real; all attendable
                g_c_mean = float(g_c.data.mean())
            if variant != VARIANT_NO_ANSWER:
                m_a, g_a = update_answer(m_a, h_a, context, mem_params, ctx_pads, activation)
                g_a_mean = float(g_a.data.mean())
        if collect_trace:
            if variant == VARIANT_NO_ANSWER:
                snapshot = cross_attend(h_a, m_c, mem_params.answer_block, None, activation)
            else:
                snapshot = m_a
            trace.append(StepTrace(k, snapshot, g_c_mean, g_a_mean))

    if variant == VARIANT_NO_ANSWER:
        # decode input is the ungated summary of the last passage's answer states
        if collect_trace:
            m_a = trace[-1].m_answer
        else:
            m_a = cross_attend(h_a_last, m_c, mem_params.answer_block, None, activation)
    return MemoryState(m_context=m_c, m_answer=m_a, passages_read=len(instances)), trace
