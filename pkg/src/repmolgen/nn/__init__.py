"""Minimal differentiable-computation substrate used by every network in the package."""

from repmolgen.nn.tensor import Tape, Tensor, concat
from repmolgen.nn.params import ParamStore
from repmolgen.nn.layers import Dense, MLP, sinusoidal_embedding
from repmolgen.nn.checkpoint import save_checkpoint, load_checkpoint, checkpoint_hash

__all__ = [
    "Tape",
    "Tensor",
    "concat",
    "ParamStore",
    "Dense",
    "MLP",
    "sinusoidal_embedding",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_hash",
]
