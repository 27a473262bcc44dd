"""Reverse-mode automatic differentiation over dense float64 arrays.

Every operation stores its parent tensors and a backward closure on the
output tensor; ``Tensor.backward`` linearises the recorded subgraph and
replays the closures in reverse, accumulating gradients. Recording is
skipped entirely when no input requires a gradient, so inference-time
calls pay no tape overhead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A dense float64 array with an optional gradient accumulator."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def backward(self) -> None:
        """Backpropagate from a scalar output through the recorded graph."""
        if self.values.shape != ():
            raise ValueError(f"backward requires a scalar, got shape {self.values.shape}")
        # Iterative post-order walk; recursion depth would explode on long chains.
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self._accumulate(np.ones((), dtype=np.float64))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _record(values: np.ndarray, parents: tuple[Tensor, ...],
            backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(values)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.values.shape != b.values.shape:
        raise ValueError(f"{op}: shape mismatch {a.values.shape} vs {b.values.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts a 1-D bias broadcast over the rows of a 2-D input."""
    if a.values.shape == b.values.shape:
        def backward(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)
    elif a.values.ndim == 2 and b.values.ndim == 1 and a.values.shape[1] == b.values.shape[0]:
        def backward(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=0))
    else:
        raise ValueError(f"add: shape mismatch {a.values.shape} vs {b.values.shape}")
    return _record(a.values + b.values, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(-g)

    return _record(a.values - b.values, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.values)
        if b.requires_grad:
            b._accumulate(g * a.values)

    return _record(a.values * b.values, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _record(a.values * c, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; the right operand may be 1-D (matrix-vector product)."""
    if a.values.ndim != 2:
        raise ValueError(f"matmul: left operand must be 2-D, got {a.values.shape}")
    if b.values.ndim == 2:
        if a.values.shape[1] != b.values.shape[0]:
            raise ValueError(f"matmul: shape mismatch {a.values.shape} vs {b.values.shape}")

        def backward(g):
            if a.requires_grad:
                a._accumulate(g @ b.values.T)
            if b.requires_grad:
                b._accumulate(a.values.T @ g)
    elif b.values.ndim == 1:
        if a.values.shape[1] != b.values.shape[0]:
            raise ValueError(f"matmul: shape mismatch {a.values.shape} vs {b.values.shape}")

        def backward(g):
            if a.requires_grad:
                a._accumulate(np.outer(g, b.values))
            if b.requires_grad:
                b._accumulate(a.values.T @ g)
    else:
        raise ValueError(f"matmul: right operand must be 1-D or 2-D, got {b.values.shape}")
    return _record(a.values @ b.values, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ValueError(f"transpose: expected 2-D input, got {a.values.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _record(a.values.T.copy(), (a,), backward)


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 1 or b.values.ndim != 1:
        raise ValueError(f"dot: expected 1-D inputs, got {a.values.shape} and {b.values.shape}")
    _same_shape(a, b, "dot")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.values)
        if b.requires_grad:
            b._accumulate(g * a.values)

    return _record(np.dot(a.values, b.values), (a, b), backward)


def row_mean(a: Tensor) -> Tensor:
    """Mean over axis 0 of a 2-D tensor."""
    if a.values.ndim != 2:
        raise ValueError(f"row_mean: expected 2-D input, got {a.values.shape}")
    n = a.values.shape[0]

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.tile(g / n, (n, 1)))

    return _record(a.values.mean(axis=0), (a,), backward)


def relu(a: Tensor) -> Tensor:
    # Subgradient at 0 is defined as 0.
    mask = a.values > 0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _record(np.where(mask, a.values, 0.0), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    x = a.values
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out * (1.0 - out))

    return _record(out, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out * out))

    return _record(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out)

    return _record(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.values)

    return _record(np.log(a.values), (a,), backward)


def softmax(a: Tensor) -> Tensor:
    """Softmax of a 1-D tensor, stabilised by max subtraction."""
    if a.values.ndim != 1:
        raise ValueError(f"softmax: expected 1-D input, got {a.values.shape}")
    if not np.all(np.isfinite(a.values)):
        raise ValueError("softmax: non-finite input")
    e = np.exp(a.values - a.values.max())
    p = e / e.sum()

    def backward(g):
        if a.requires_grad:
            a._accumulate(p * (g - np.dot(g, p)))

    return _record(p, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.values, float(g)))

    return _record(a.values.sum(), (a,), backward)


def gather(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Row lookup into a 2-D table; backward scatter-adds into the looked-up rows."""
    if table.values.ndim != 2:
        raise ValueError(f"gather: expected 2-D table, got {table.values.shape}")
    idx = np.asarray(ids, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError(f"gather: expected 1-D index list, got shape {idx.shape}")

    def backward(g):
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.values)
            np.add.at(table.grad, idx, g)

    return _record(table.values[idx], (table,), backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack 1-D tensors of equal length into a 2-D tensor, one per row."""
    if not rows:
        raise ValueError("stack_rows: empty input")
    width = rows[0].values.shape
    for r in rows:
        if r.values.ndim != 1 or r.values.shape != width:
            raise ValueError(f"stack_rows: shape mismatch {width} vs {r.values.shape}")
    parents = tuple(rows)

    def backward(g):
        for i, r in enumerate(parents):
            if r.requires_grad:
                r._accumulate(g[i])

    return _record(np.stack([r.values for r in rows]), parents, backward)


def take_row(a: Tensor, i: int) -> Tensor:
    """Row i of a 2-D tensor as a 1-D tensor."""
    if a.values.ndim != 2:
        raise ValueError(f"take_row: expected 2-D input, got {a.values.shape}")
    if not 0 <= i < a.values.shape[0]:
        raise ValueError(f"take_row: row {i} out of range for shape {a.values.shape}")

    def backward(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.values)
            a.grad[i] += g

    return _record(a.values[i].copy(), (a,), backward)


def grad_check(f: Callable[[list[Tensor]], Tensor], inputs: list[Tensor],
               h: float = 1e-4) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``f`` must rebuild its computation from ``inputs`` on every call and
    return a scalar tensor. The relative error denominator is floored at
    1e-8 so near-zero gradients compare on an absolute scale.
    """
    if h <= 0:
        raise ValueError("grad_check: h must be positive")
    for t in inputs:
        if not t.requires_grad:
            raise ValueError("grad_check: all inputs must require gradients")
        t.zero_grad()
    out = f(inputs)
    if out.values.shape != ():
        raise ValueError(f"grad_check: f must return a scalar, got shape {out.values.shape}")
    if not np.isfinite(out.values):
        raise FloatingPointError("grad_check: non-finite function value")
    out.backward()
    analytic = [np.zeros_like(t.values) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, grad in zip(inputs, analytic):
        flat = t.values.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f(inputs).values)
            flat[i] = orig - h
            f_minus = float(f(inputs).values)
            flat[i] = orig
            if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                raise FloatingPointError("grad_check: non-finite function value")
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(grad_flat[i]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad_flat[i] - numeric) / denom)
    return worst


@dataclass
class AdamState:
    """Per-parameter Adam moments plus shared hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, in place, from each tensor's accumulated grad."""
    if state.lr <= 0:
        raise ValueError("adam_step: lr must be positive")
    state.t += 1
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.values)
        if g.shape != p.values.shape:
            raise ValueError(f"adam_step: grad shape {g.shape} vs param shape {p.values.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for '{name}'")
        m = state.m.setdefault(name, np.zeros_like(p.values))
        v = state.v.setdefault(name, np.zeros_like(p.values))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** state.t)
        v_hat = v / (1.0 - state.beta2 ** state.t)
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
