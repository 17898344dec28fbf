"""Training-step math: AdamW, warmup/decay schedule, global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NumericError, Tensor


@dataclass
class OptimState:
    """Per-parameter first/second moments and the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def ensure(self, name: str, like: np.ndarray) -> None:
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)


def adamw_step(
    params: dict[str, Tensor],
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-6,
    weight_decay: float = 0.01,
    no_decay: frozenset[str] | set[str] = frozenset(),
) -> None:
    """One AdamW update over every parameter that has a gradient.

    Weight decay is decoupled (p -= lr*wd*p, applied before the moment
    update) and skipped for names in ``no_decay`` — biases and
    normalization gains/shifts, marked by the caller.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    state.t += 1
    t = state.t
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        if weight_decay != 0.0 and name not in no_decay:
            p.data -= lr * weight_decay * p.data
        state.ensure(name, p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / bc1
        v_hat = v / bc2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def lr_at(step: int, total_steps: int, peak: float, warmup_fraction: float = 0.2) -> float:
    """Linear ramp 0→peak over the first warmup fraction, then linear decay to 0.

    The warmup boundary is floor(warmup_fraction * total_steps), floored at 1
    so the schedule stays piecewise linear with lr_at(0) == lr_at(total) == 0.
    """
    if total_steps <= 0:
        raise ValueError(f"total_steps must be positive, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    # +1e-9 guards the floor against float noise (0.2*total must floor exactly);
    # clamping keeps both endpoints at zero even for degenerate totals
    warmup = min(max(1, int(warmup_fraction * total_steps + 1e-9)), total_steps - 1)
    if warmup == 0:
        return 0.0
    if step <= warmup:
        return peak * step / warmup
    return peak * (total_steps - step) / (total_steps - warmup)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Scale all grads by max_norm/norm when the global L2 norm exceeds max_norm.

    Returns the (possibly scaled) grads and the observed pre-clip norm.
    """
    total = 0.0
    for g in grads:
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient passed to clip_global_norm")
        total += float((g * g).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        grads = [g * scale for g in grads]
    return grads, norm
