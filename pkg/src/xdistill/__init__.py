"""Cross-modal distillation toolkit.

A text encoder, a chunked clip-text encoder, stacked cross-modal attention
layers, the joint adaptation objectives that tie them together, and the
analysis tools (PWCCA similarity, grounded-token ratios) used to inspect
the result.  All numerics run on a small reverse-mode autodiff core over
numpy float64.
"""

__version__ = "0.1.0"

from .checkpoint import CheckpointError, config_hash, load_checkpoint, load_into, save_checkpoint
from .crossmodal import (
    BLOCK_LEN,
    CrossModalBatch,
    CrossModalConfig,
    chunk_for_clip,
    cross_forward,
    cross_parameter_count,
)
from .encoder import EncoderConfig, count_parameters, encode_stream, init_encoder_weights
from .model import CrossModalModel, extract_language_encoder
from .numerics import Tape, Tensor, no_grad
from .tokenizers import CLIP, LANGUAGE, Vocab, build_vocab, decode, encode

__all__ = [
    "__version__",
    "BLOCK_LEN",
    "CLIP",
    "LANGUAGE",
    "CheckpointError",
    "CrossModalBatch",
    "CrossModalConfig",
    "CrossModalModel",
    "EncoderConfig",
    "Tape",
    "Tensor",
    "Vocab",
    "build_vocab",
    "chunk_for_clip",
    "config_hash",
    "count_parameters",
    "cross_forward",
    "cross_parameter_count",
    "decode",
    "encode",
    "encode_stream",
    "extract_language_encoder",
    "init_encoder_weights",
    "load_checkpoint",
    "load_into",
    "no_grad",
    "save_checkpoint",
]
