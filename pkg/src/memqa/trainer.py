"""Training loop over question groups, with checkpoint/resume support.

One question group (its K instances sharing the vote-selected best answer)
yields one loss and one backward pass per epoch; groups are batched only
through gradient accumulation (``accum_groups``). The data order for epoch
e is a pure function of (seed, e) and parameter init a pure function of
seed, so a run is reproducible from its config alone and a checkpoint
resumes bit-exactly: it carries the parameters, optimizer moments, step
counter, and the sequential dropout RNG state.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import QARecord, assemble_group
from .model import Model, ModelConfig, forward_loss
from .optim import OptimState, adamw_step, clip_global_norm, lr_at
from .tensor import NumericError, no_grad

_MAGIC = b"MQACKPT\x00"
_FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    """Checkpoint file is incompatible with this code or the active config."""


@dataclass
class Checkpoint:
    config: ModelConfig
    model: Model
    optim: OptimState
    step: int
    rng_state: dict


@dataclass
class StepMetrics:
    step: int
    lr: float
    loss: float
    grad_norm: float


def _epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng([seed, epoch, 0xD47A])
    return rng.permutation(n)


def _dropout_masks(config: ModelConfig, rng: np.random.Generator, k: int):
    """Per-block pairs of inverted-dropout masks covering the K-instance batch."""
    keep = 1.0 - config.dropout
    shape = (k, config.n_x, config.d)

    def one():
        return (rng.random(shape) < keep).astype(config.dtype) / keep

    return [(one(), one()) for _ in range(config.blocks)]


def train(
    config: ModelConfig,
    records: list[QARecord],
    resume: Checkpoint | None = None,
    stop_at_step: int | None = None,
    on_step=None,
) -> tuple[Checkpoint, list[StepMetrics]]:
    """Run (or continue) training; returns the final checkpoint and per-step metrics.

    ``stop_at_step`` pauses the run early without shortening the schedule,
    so the returned checkpoint can be resumed to finish it.
    """
    if not records:
        raise ValueError("dataset is empty")
    groups = [assemble_group(r, config.data_config) for r in records]
    n = len(groups)
    accum = max(1, config.accum_groups)
    steps_per_epoch = math.ceil(n / accum)
    total = config.total_steps or config.epochs * steps_per_epoch
    if total <= 0:
        raise ValueError("total step budget must be positive")
    stop = total if stop_at_step is None else min(total, stop_at_step)

    if resume is not None:
        if resume.config.to_json() != config.to_json():
            raise CheckpointError("checkpoint config does not match the active config")
        model, optim, step = resume.model, resume.optim, resume.step
        drop_rng = np.random.default_rng(0)
        drop_rng.bit_generator.state = resume.rng_state
    else:
        model = Model.build(config)
        optim = OptimState()
        step = 0
        drop_rng = np.random.default_rng([config.seed, 0xD09])

    metrics: list[StepMetrics] = []
    no_decay = frozenset(model.no_decay)
    while step < stop:
        epoch = step // steps_per_epoch
        perm = _epoch_permutation(config.seed, epoch, n)
        cursor = (step - epoch * steps_per_epoch) * accum
        while cursor < n and step < stop:
            chunk = perm[cursor : cursor + accum]
            model.zero_grad()
            chunk_loss = 0.0
            for gi in chunk:
                masks = _dropout_masks(config, drop_rng, config.k_passages) if config.dropout > 0 else None
                loss, _, _ = forward_loss(model, groups[gi], dropout_masks=masks)
                if not np.isfinite(loss.data):
                    raise NumericError(
                        f"non-finite loss at step {step}, question {records[gi].qid!r}")
                chunk_loss += float(loss.data)
                (loss * (1.0 / len(chunk))).backward()
            names = [k for k, p in model.params.items() if p.grad is not None]
            clipped, norm = clip_global_norm([model.params[k].grad for k in names], config.clip_norm)
            for k, g in zip(names, clipped):
                model.params[k].grad = g
            lr = lr_at(step + 1, total, config.peak_lr, config.warmup_fraction)
            adamw_step(model.params, optim, lr, config.beta1, config.beta2,
                       config.adam_eps, config.weight_decay, no_decay)
            step += 1
            cursor += accum
            row = StepMetrics(step, lr, chunk_loss / len(chunk), norm)
            metrics.append(row)
            if on_step is not None:
                on_step(row)
    ckpt = Checkpoint(config, model, optim, step, drop_rng.bit_generator.state)
    return ckpt, metrics


def corpus_loss(model: Model, records: list[QARecord]) -> float:
    """Mean per-token teacher-forced cross-entropy over a dataset."""
    dc = model.config.data_config
    total = 0.0
    with no_grad():
        for record in records:
            loss, _, _ = forward_loss(model, assemble_group(record, dc))
            total += float(loss.data)
    return total / len(records)


# -- checkpoint io ------------------------------------------------------------


def fresh_checkpoint(config: ModelConfig) -> Checkpoint:
    """Initialized model with an untouched optimizer and step counter 0."""
    return Checkpoint(config, Model.build(config), OptimState(), 0,
                      np.random.default_rng([config.seed, 0xD09]).bit_generator.state)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    names = sorted(ckpt.model.params)
    opt_names = sorted(ckpt.optim.m)
    header = {
        "format_version": _FORMAT_VERSION,
        "config": json.loads(ckpt.config.to_json()),
        "step": ckpt.step,
        "rng_state": _encode_rng(ckpt.rng_state),
        "params": [_array_meta(n, ckpt.model.params[n].data) for n in names],
        "opt_m": [_array_meta(n, ckpt.optim.m[n]) for n in opt_names],
        "opt_v": [_array_meta(n, ckpt.optim.v[n]) for n in opt_names],
        "opt_t": ckpt.optim.t,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<IQ", _FORMAT_VERSION, len(blob)))
        f.write(blob)
        for n in names:
            f.write(np.ascontiguousarray(ckpt.model.params[n].data).tobytes())
        for n in opt_names:
            f.write(np.ascontiguousarray(ckpt.optim.m[n]).tobytes())
        for n in opt_names:
            f.write(np.ascontiguousarray(ckpt.optim.v[n]).tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path} is not a checkpoint file")
        version, header_len = struct.unpack("<IQ", f.read(12))
        if version != _FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {version} unsupported (expected {_FORMAT_VERSION})")
        header = json.loads(f.read(header_len).decode("utf-8"))
        config = ModelConfig.from_json(json.dumps(header["config"]))
        model = Model.build(config)
        for meta in header["params"]:
            arr = _read_array(f, meta, path)
            name = meta["name"]
            if name not in model.params:
                raise CheckpointError(f"unexpected parameter {name!r} in checkpoint")
            if model.params[name].data.shape != arr.shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: config implies "
                    f"{model.params[name].data.shape}, checkpoint holds {arr.shape}")
            model.params[name].data = arr
        optim = OptimState(t=header["opt_t"])
        for meta in header["opt_m"]:
            optim.m[meta["name"]] = _read_array(f, meta, path)
        for meta in header["opt_v"]:
            optim.v[meta["name"]] = _read_array(f, meta, path)
    return Checkpoint(config, model, optim, header["step"], _decode_rng(header["rng_state"]))


def _array_meta(name: str, arr: np.ndarray) -> dict:
    return {"name": name, "shape": list(arr.shape), "dtype": str(arr.dtype)}


def _read_array(f, meta: dict, path) -> np.ndarray:
    dtype = np.dtype(meta["dtype"])
    shape = tuple(meta["shape"])
    n_bytes = dtype.itemsize * int(np.prod(shape)) if shape else dtype.itemsize
    raw = f.read(n_bytes)
    if len(raw) != n_bytes:
        raise CheckpointError(f"{path} is truncated")
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def _encode_rng(state: dict) -> dict:
    # PCG64 state holds ints larger than 2**64; stringify for JSON safety
    def enc(v):
        if isinstance(v, dict):
            return {k: enc(x) for k, x in v.items()}
        if isinstance(v, int):
            return str(v)
        return v

    return enc(state)


def _decode_rng(state: dict) -> dict:
    def dec(v):
        if isinstance(v, dict):
            return {k: dec(x) for k, x in v.items()}
        if isinstance(v, str) and (v.isdigit() or (v.startswith("-") and v[1:].isdigit())):
            return int(v)
        return v

    return dec(state)
