"""Named parameter store with gradient slots and an adaptive-moment optimizer."""
from __future__ import annotations

import numpy as np

from repmolgen.errors import TrainingDivergenceError
from repmolgen.nn.tensor import Tensor


class ParamStore:
    """Holds named float64 parameter tensors plus optimizer state.

    Parameters are leaf tensors that participate in differentiation; gradients
    accumulate into their `.grad` slot during tape replay and are consumed by
    `adam_step`.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._step = 0

    # -- registration -------------------------------------------------------
    def add(self, name: str, value) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name: {name!r}")
        tensor = Tensor(np.array(value, dtype=np.float64), _tracked=True)
        self._tensors[name] = tensor
        self._m[name] = np.zeros_like(tensor.data)
        self._v[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return list(self._tensors.keys())

    def items(self):
        return self._tensors.items()

    def n_parameters(self) -> int:
        return int(sum(t.data.size for t in self._tensors.values()))

    # -- optimizer state ------------------------------------------------------
    @property
    def step_count(self) -> int:
        return self._step

    def moment1(self, name: str) -> np.ndarray:
        return self._m[name]

    def moment2(self, name: str) -> np.ndarray:
        return self._v[name]

    def set_optimizer_state(self, step: int, m: dict, v: dict) -> None:
        if step < 0:
            raise ValueError("optimizer step count must be non-negative")
        self._step = int(step)
        for name in self._tensors:
            self._m[name] = np.array(m[name], dtype=np.float64)
            self._v[name] = np.array(v[name], dtype=np.float64)

    def zero_grad(self) -> None:
        for tensor in self._tensors.values():
            tensor.grad = None

    # -- update ----------------------------------------------------------------
    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> None:
        """Adaptive-moment update; validates gradients, then zeroes them."""
        for name, tensor in self._tensors.items():
            if tensor.grad is not None and not np.isfinite(tensor.grad).all():
                raise TrainingDivergenceError(f"non-finite gradient in parameter {name!r}")
        self._step += 1
        bias1 = 1.0 - beta1 ** self._step
        bias2 = 1.0 - beta2 ** self._step
        for name, tensor in self._tensors.items():
            g = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            tensor.data -= lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
            if tensor.grad is not None:
                tensor.grad.fill(0.0)
