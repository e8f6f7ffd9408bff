"""Reverse-mode automatic differentiation over numpy arrays.

A Tape records derived tensors in creation order. Parents are always created
before children, so walking the record in reverse is a valid topological
order: every node's backward closure runs exactly once, after all of its
consumers have contributed to its gradient. Operations executed with no
active tape (inference) skip recording entirely and cost plain numpy.

All data is float64.
"""
from __future__ import annotations

import numpy as np

from repmolgen.errors import DimensionError, StateError

_TAPES: list["Tape"] = []


def _active_tape():
    return _TAPES[-1] if _TAPES else None


class Tape:
    """Ordered record of differentiable operations with their saved activations."""

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._replayed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        if popped is not self:  # pragma: no cover - misuse guard
            raise StateError("tape context exited out of order")
        return False

    def _record(self, node: "Tensor") -> None:
        self._nodes.append(node)

    def nodes(self) -> list["Tensor"]:
        return list(self._nodes)

    def backward(self, loss: "Tensor") -> None:
        """Propagate d(loss)/d(node) to every recorded node and leaf parameter."""
        if self._replayed:
            raise StateError("tape already replayed; record a new forward pass")
        if not self._nodes:
            raise StateError("backward called before any forward pass was recorded")
        if not any(loss is node for node in self._nodes):
            raise StateError("loss tensor was not produced under this tape")
        if loss.data.size != 1:
            raise DimensionError(f"loss must be scalar, got shape {loss.data.shape}")
        self._replayed = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def clear(self) -> None:
        """Drop all recorded nodes and their saved activations."""
        for node in self._nodes:
            node._backward = None
            node._parents = ()
            node.grad = None
        self._nodes.clear()
        self._replayed = False


def _wrap(value) -> "Tensor":
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function computed without overflow for large |x|."""
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accumulate(t: "Tensor", grad: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def _make(data: np.ndarray, parents: tuple, backward_fn) -> "Tensor":
    """Create a derived tensor, recording it if a tape is active and any parent is tracked."""
    tape = _active_tape()
    if tape is None or not any(p._tracked for p in parents):
        return Tensor(data)
    node = Tensor(data, _tracked=True)
    node._parents = parents
    node._backward = backward_fn
    tape._record(node)
    return node


class Tensor:
    """numpy array with an optional gradient slot and backward closure."""

    __slots__ = ("data", "grad", "_backward", "_parents", "_tracked")

    def __init__(self, data, _tracked: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._backward = None
        self._parents: tuple = ()
        self._tracked = _tracked

    # -- conveniences ------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, tracked={self._tracked})"

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other):
        o = _wrap(other)
        data = self.data + o.data

        def backward(g):
            if self._tracked:
                _accumulate(self, _unbroadcast(g, self.data.shape))
            if o._tracked:
                _accumulate(o, _unbroadcast(g, o.data.shape))

        return _make(data, (self, o), backward)

    __radd__ = __add__

    def __sub__(self, other):
        o = _wrap(other)
        data = self.data - o.data

        def backward(g):
            if self._tracked:
                _accumulate(self, _unbroadcast(g, self.data.shape))
            if o._tracked:
                _accumulate(o, _unbroadcast(-g, o.data.shape))

        return _make(data, (self, o), backward)

    def __rsub__(self, other):
        return _wrap(other).__sub__(self)

    def __mul__(self, other):
        o = _wrap(other)
        data = self.data * o.data

        def backward(g):
            if self._tracked:
                _accumulate(self, _unbroadcast(g * o.data, self.data.shape))
            if o._tracked:
                _accumulate(o, _unbroadcast(g * self.data, o.data.shape))

        return _make(data, (self, o), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = _wrap(other)
        data = self.data / o.data

        def backward(g):
            if self._tracked:
                _accumulate(self, _unbroadcast(g / o.data, self.data.shape))
            if o._tracked:
                _accumulate(o, _unbroadcast(-g * self.data / (o.data * o.data), o.data.shape))

        return _make(data, (self, o), backward)

    def __rtruediv__(self, other):
        return _wrap(other).__truediv__(self)

    def __neg__(self):
        def backward(g):
            _accumulate(self, -g)

        return _make(-self.data, (self,), backward)

    def __pow__(self, exponent):
        k = float(exponent)
        data = self.data ** k

        def backward(g):
            _accumulate(self, g * k * self.data ** (k - 1.0))

        return _make(data, (self,), backward)

    def __matmul__(self, other):
        o = _wrap(other)
        if self.data.shape[-1] != o.data.shape[-2 if o.data.ndim > 1 else 0]:
            raise DimensionError(
                f"matmul inner dimensions differ: {self.data.shape} @ {o.data.shape}"
            )
        data = self.data @ o.data

        def backward(g):
            if self._tracked:
                _accumulate(self, _unbroadcast(g @ o.data.swapaxes(-1, -2), self.data.shape))
            if o._tracked:
                _accumulate(o, _unbroadcast(self.data.swapaxes(-1, -2) @ g, o.data.shape))

        return _make(data, (self, o), backward)

    # -- elementwise functions ----------------------------------------------
    def exp(self):
        data = np.exp(self.data)

        def backward(g):
            _accumulate(self, g * data)

        return _make(data, (self,), backward)

    def log(self):
        def backward(g):
            _accumulate(self, g / self.data)

        return _make(np.log(self.data), (self,), backward)

    def sqrt(self):
        data = np.sqrt(self.data)

        def backward(g):
            _accumulate(self, g * 0.5 / data)

        return _make(data, (self,), backward)

    def sigmoid(self):
        data = _stable_sigmoid(self.data)

        def backward(g):
            _accumulate(self, g * data * (1.0 - data))

        return _make(data, (self,), backward)

    def silu(self):
        sig = _stable_sigmoid(self.data)
        data = self.data * sig

        def backward(g):
            _accumulate(self, g * sig * (1.0 + self.data * (1.0 - sig)))

        return _make(data, (self,), backward)

    def tanh(self):
        data = np.tanh(self.data)

        def backward(g):
            _accumulate(self, g * (1.0 - data * data))

        return _make(data, (self,), backward)

    # -- reductions ----------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def backward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(g, axis)
            _accumulate(self, np.broadcast_to(gg, shape))

        return _make(data, (self,), backward)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )
        scaled = self.sum(axis=axis, keepdims=keepdims)
        return scaled * (1.0 / float(count))

    def max(self, axis: int, keepdims=False):
        data = self.data.max(axis=axis, keepdims=keepdims)

        def backward(g):
            expanded = data if keepdims else np.expand_dims(data, axis)
            gg = g if keepdims else np.expand_dims(g, axis)
            mask = (self.data == expanded).astype(np.float64)
            mask /= mask.sum(axis=axis, keepdims=True)
            _accumulate(self, mask * gg)

        return _make(data, (self,), backward)

    # -- structural ops --------------------------------------------------------
    def reshape(self, shape):
        original = self.data.shape

        def backward(g):
            _accumulate(self, g.reshape(original))

        return _make(self.data.reshape(shape), (self,), backward)

    def expand_dims(self, axis: int):
        original = self.data.shape

        def backward(g):
            _accumulate(self, g.reshape(original))

        return _make(np.expand_dims(self.data, axis), (self,), backward)

    def __getitem__(self, key):
        data = self.data[key]
        shape = self.data.shape

        def backward(g):
            full = np.zeros(shape)
            np.add.at(full, key, g)
            _accumulate(self, full)

        return _make(data, (self,), backward)


def concat(tensors, axis: int = 0):
    """Concatenate tensors along an axis; gradients are split back."""
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        pieces = np.split(g, offsets, axis=axis)
        for t, piece in zip(tensors, pieces):
            if t._tracked:
                _accumulate(t, piece)

    return _make(data, tuple(tensors), backward)
