"""Multi-passage generative QA with cross-passage gated memories.

The model reads a question's K review passages sequentially. Each passage
is encoded together with the question and the (teacher-forced or partial)
answer under a prefix-bidirectional attention mask; a gated context memory
accumulates cross-passage evidence and a gated answer memory refines the
answer representation passage by passage. The final answer memory is
projected to the vocabulary for teacher-forced training or autoregressive
decoding. Everything runs on a small numpy-backed reverse-mode autodiff
core so every gradient is checkable against finite differences.
"""

from .data import DataConfig, InstanceTensors, QARecord, assemble_triple, filter_record, \
    select_best_answer
from .decode import GenerationConfig, beam_decode, greedy_decode, step_distribution
from .memory import MemoryState, read_passages
from .model import Model, ModelConfig, answer_loss, forward_loss, project_vocab
from .optim import OptimState, adamw_step, clip_global_norm, lr_at
from .synth import gen_synthetic, gen_synthetic_raw
from .tensor import NumericError, Tensor, grad_check
from .trainer import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint, train
from .vocab import Vocab, build_vocab, tokenize

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "DataConfig",
    "GenerationConfig",
    "InstanceTensors",
    "MemoryState",
    "Model",
    "ModelConfig",
    "NumericError",
    "OptimState",
    "QARecord",
    "Tensor",
    "Vocab",
    "adamw_step",
    "answer_loss",
    "assemble_triple",
    "beam_decode",
    "build_vocab",
    "clip_global_norm",
    "filter_record",
    "forward_loss",
    "gen_synthetic",
    "gen_synthetic_raw",
    "grad_check",
    "greedy_decode",
    "load_checkpoint",
    "lr_at",
    "project_vocab",
    "read_passages",
    "save_checkpoint",
    "select_best_answer",
    "step_distribution",
    "tokenize",
    "train",
]
