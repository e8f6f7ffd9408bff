"""Network building blocks: dense layers, MLPs, and fixed positional embeddings."""
from __future__ import annotations

import numpy as np

from repmolgen.errors import DimensionError
from repmolgen.nn.params import ParamStore
from repmolgen.nn.tensor import Tensor


def uniform_fan_in(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    """Uniform init scaled by the inverse square root of the fan-in."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


class Dense:
    """Affine layer y = x W + b with parameters registered in a ParamStore."""

    def __init__(self, store: ParamStore, name: str, fan_in: int, fan_out: int,
                 rng: np.random.Generator, bias: bool = True, zero_init: bool = False):
        w0 = np.zeros((fan_in, fan_out)) if zero_init else uniform_fan_in(rng, fan_in, fan_out)
        self.w = store.add(f"{name}.w", w0)
        self.b = store.add(f"{name}.b", np.zeros(fan_out)) if bias else None
        self.fan_in = fan_in

    def __call__(self, x: Tensor) -> Tensor:
        if x.data.shape[-1] != self.fan_in:
            raise DimensionError(
                f"dense layer expects inputs of width {self.fan_in}, got {x.data.shape}"
            )
        out = x @ self.w
        if self.b is not None:
            out = out + self.b
        return out


class MLP:
    """Stack of dense layers with SiLU between them.

    zero_init_last zero-initializes the final layer so the initial output is
    exactly zero (used by the denoisers).
    """

    def __init__(self, store: ParamStore, name: str, widths: list[int],
                 rng: np.random.Generator, zero_init_last: bool = False, bias: bool = True):
        if len(widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        self.layers = []
        last = len(widths) - 2
        for i in range(len(widths) - 1):
            self.layers.append(
                Dense(store, f"{name}.{i}", widths[i], widths[i + 1], rng,
                      bias=bias, zero_init=(zero_init_last and i == last))
            )

    def __call__(self, x: Tensor) -> Tensor:
        n = len(self.layers)
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < n - 1:
                x = x.silu()
        return x


def sinusoidal_embedding(values: np.ndarray, dim: int, max_freq: float = 1000.0) -> np.ndarray:
    """Fixed sin/cos features of scalars in [0, 1]; returns an array of shape (B, dim)."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(max_freq), half))
    angles = values[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(angles), np.cos(angles)], axis=1)
    if emb.shape[1] < dim:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], dim - emb.shape[1]))], axis=1)
    return emb
