"""Model configuration, parameter initialization, and the training forward pass."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import DataConfig, InstanceTensors
from .encoder import AttentionParams, BlockParams, EncoderParams
from .memory import (
    VARIANT_FULL,
    VARIANT_NO_ANSWER,
    VARIANT_NO_CONTEXT,
    VARIANTS,
    GateParams,
    MemoryParams,
    MemoryState,
    StepTrace,
    read_passages,
)
from .tensor import Tensor


@dataclass
class ModelConfig:
    """Every architecture and training knob; round-trips through JSON."""

    vocab_size: int
    d: int = 64
    blocks: int = 2
    heads: int = 4
    ff_size: int = 256
    n_q: int = 40
    n_r: int = 124
    n_a: int = 82
    k_passages: int = 10
    variant: str = VARIANT_FULL
    activation: str = "gelu"
    dropout: float = 0.0
    peak_lr: float = 1e-5
    total_steps: int | None = None
    warmup_fraction: float = 0.2
    clip_norm: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-6
    weight_decay: float = 0.01
    epochs: int = 3
    per_step_loss: bool = False
    accum_groups: int = 1
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.precision not in ("float32", "float64"):
            raise ValueError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.d % self.heads != 0:
            raise ValueError(f"heads ({self.heads}) must divide d ({self.d})")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"activation must be gelu or relu, got {self.activation!r}")
        if self.total_steps is not None and self.total_steps <= 0:
            raise ValueError("total_steps must be positive when set")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def data_config(self) -> DataConfig:
        return DataConfig(n_q=self.n_q, n_r=self.n_r, n_a=self.n_a, k_passages=self.k_passages)

    @property
    def n_part1(self) -> int:
        return self.data_config.n_part1

    @property
    def n_part2(self) -> int:
        return self.data_config.n_part2

    @property
    def n_x(self) -> int:
        return self.n_part1 + self.n_part2

    @property
    def dtype(self):
        return np.float32 if self.precision == "float32" else np.float64

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        obj = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**obj)


def _truncated_normal(rng: np.random.Generator, shape, std: float, dtype) -> np.ndarray:
    """Normal(0, std) redrawn until everything lies within two deviations."""
    out = rng.normal(0.0, std, size=shape)
    for _ in range(100):
        bad = np.abs(out) > 2 * std
        if not bad.any():
            break
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
    return out.astype(dtype)


class Model:
    """Parameter container plus views shaped for the encoder/memory/decoder."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor], no_decay: set[str]):
        self.config = config
        self.params = params
        self.no_decay = no_decay
        self.encoder_params = self._encoder_view()
        self.memory_params = self._memory_view()

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, config: ModelConfig, rng: np.random.Generator | None = None) -> "Model":
        rng = rng or np.random.default_rng(config.seed)
        dtype = config.dtype
        d, ff = config.d, config.ff_size
        params: dict[str, Tensor] = {}
        no_decay: set[str] = set()

        def weight(name: str, shape) -> None:
            params[name] = Tensor(_truncated_normal(rng, shape, 0.02, dtype), requires_grad=True)

        def bias(name: str, n: int, value: float = 0.0) -> None:
            params[name] = Tensor(np.full(n, value, dtype=dtype), requires_grad=True)
            no_decay.add(name)

        def block(prefix: str) -> None:
            for w in ("wq", "wk", "wv", "wo"):
                weight(f"{prefix}.attn.{w}", (d, d))
            for b in ("bq", "bk", "bv", "bo"):
                bias(f"{prefix}.attn.{b}", d)
            bias(f"{prefix}.ln1.gain", d, 1.0)
            bias(f"{prefix}.ln1.shift", d)
            weight(f"{prefix}.ff.w1", (d, ff))
            bias(f"{prefix}.ff.b1", ff)
            weight(f"{prefix}.ff.w2", (ff, d))
            bias(f"{prefix}.ff.b2", d)
            bias(f"{prefix}.ln2.gain", d, 1.0)
            bias(f"{prefix}.ln2.shift", d)

        weight("emb.token", (config.vocab_size, d))
        weight("emb.segment", (2, d))
        weight("emb.position", (config.n_x, d))
        for i in range(config.blocks):
            block(f"enc{i}")
        if config.variant != VARIANT_NO_CONTEXT:
            block("mem.ctx.block")
            weight("mem.ctx.gate.w_prev", (d, d))
            weight("mem.ctx.gate.w_z", (d, d))
            bias("mem.ctx.gate.bias", d)
        block("mem.ans.block")
        if config.variant != VARIANT_NO_ANSWER:
            weight("mem.ans.gate.w_prev", (d, d))
            weight("mem.ans.gate.w_z", (d, d))
            bias("mem.ans.gate.bias", d)
        weight("dec.w", (d, config.vocab_size))
        bias("dec.b", config.vocab_size)
        return cls(config, params, no_decay)

    def _attn_view(self, prefix: str) -> AttentionParams:
        p = self.params
        return AttentionParams(
            wq=p[f"{prefix}.wq"], wk=p[f"{prefix}.wk"], wv=p[f"{prefix}.wv"], wo=p[f"{prefix}.wo"],
            bq=p[f"{prefix}.bq"], bk=p[f"{prefix}.bk"], bv=p[f"{prefix}.bv"], bo=p[f"{prefix}.bo"],
            heads=self.config.heads,
        )

    def _block_view(self, prefix: str) -> BlockParams:
        p = self.params
        return BlockParams(
            attn=self._attn_view(f"{prefix}.attn"),
            ln1_gain=p[f"{prefix}.ln1.gain"], ln1_shift=p[f"{prefix}.ln1.shift"],
            ff_w1=p[f"{prefix}.ff.w1"], ff_b1=p[f"{prefix}.ff.b1"],
            ff_w2=p[f"{prefix}.ff.w2"], ff_b2=p[f"{prefix}.ff.b2"],
            ln2_gain=p[f"{prefix}.ln2.gain"], ln2_shift=p[f"{prefix}.ln2.shift"],
        )

    def _encoder_view(self) -> EncoderParams:
        return EncoderParams(
            token_emb=self.params["emb.token"],
            segment_emb=self.params["emb.segment"],
            position_emb=self.params["emb.position"],
            blocks=[self._block_view(f"enc{i}") for i in range(self.config.blocks)],
        )

    def _gate_view(self, prefix: str) -> GateParams:
        p = self.params
        return GateParams(w_prev=p[f"{prefix}.w_prev"], w_z=p[f"{prefix}.w_z"], bias=p[f"{prefix}.bias"])

    def _memory_view(self) -> MemoryParams:
        has_ctx = self.config.variant != VARIANT_NO_CONTEXT
        has_ans_gate = self.config.variant != VARIANT_NO_ANSWER
        return MemoryParams(
            context_block=self._block_view("mem.ctx.block") if has_ctx else None,
            context_gate=self._gate_view("mem.ctx.gate") if has_ctx else None,
            answer_block=self._block_view("mem.ans.block"),
            answer_gate=self._gate_view("mem.ans.gate") if has_ans_gate else None,
        )

    # -- bookkeeping ----------------------------------------------------------

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def grads(self) -> dict[str, np.ndarray]:
        return {k: p.grad for k, p in self.params.items() if p.grad is not None}


# -- decoder head -------------------------------------------------------------


def project_vocab(m_answer: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-position affine map from answer states (S, d) to vocabulary logits (S, V)."""
    if m_answer.shape[-1] != w.shape[0] or w.shape[1] != b.shape[0]:
        raise ValueError(
            f"shape mismatch: states {m_answer.shape}, weight {w.shape}, bias {b.shape}")
    return m_answer @ w + b


def answer_loss(logits: Tensor, target_ids: np.ndarray, target_mask: np.ndarray) -> Tensor:
    """Mean cross-entropy over scored Part-2 positions; pads contribute zero."""
    n_scored = int(np.asarray(target_mask).sum())
    if n_scored == 0:
        raise ValueError("every target position is masked; nothing to score")
    logp = T.log_softmax(logits, axis=-1)
    picked = np.zeros(logits.shape, dtype=logits.data.dtype)
    picked[np.arange(logits.shape[0]), target_ids] = target_mask
    return (logp * Tensor(picked)).sum() * (-1.0 / n_scored)


def forward_loss(
    model: Model,
    instances: list[InstanceTensors],
    collect_trace: bool = False,
    dropout_masks=None,
) -> tuple[Tensor, MemoryState, list[StepTrace]]:
    """Teacher-forced loss for one question group (K instances, shared answer)."""
    cfg = model.config
    want_trace = collect_trace or cfg.per_step_loss
    state, trace = read_passages(
        instances, model.encoder_params, model.memory_params,
        variant=cfg.variant, activation=cfg.activation,
        collect_trace=want_trace, dropout_masks=dropout_masks,
    )
    inst = instances[0]
    if cfg.per_step_loss:
        losses = [
            answer_loss(project_vocab(step.m_answer, model.params["dec.w"], model.params["dec.b"]),
                        inst.target_ids, inst.target_mask)
            for step in trace
        ]
        total = losses[0]
        for piece in losses[1:]:
            total = total + piece
        loss = total * (1.0 / len(losses))
    else:
        logits = project_vocab(state.m_answer, model.params["dec.w"], model.params["dec.b"])
        loss = answer_loss(logits, inst.target_ids, inst.target_mask)
    return loss, state, trace if collect_trace else []
