"""Minimal reverse-mode differentiation over dense float64 tensors.

A Tape records every primitive applied to Tensors created on it; backward()
replays the tape in reverse to accumulate gradients. The op set is exactly
what MLP/LSTM bases and distribution-head log-likelihoods need; there is no
GPU, no fusion, no higher-order support.

Conventions:
  - all buffers are float64, row-major; tensors are never mutated in place
  - gradient accumulation is addition
  - subgradients at non-differentiable points are documented per op
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError
from .rng import stream


class Tensor:
    """A value node on a tape. Treat as immutable."""

    __slots__ = ("tape", "node_id", "values")

    def __init__(self, tape: "Tape", node_id: int, values: np.ndarray):
        self.tape = tape
        self.node_id = node_id
        self.values = values

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def __repr__(self) -> str:
        return f"Tensor(id={self.node_id}, shape={self.values.shape})"


class _Node:
    __slots__ = ("op", "inputs", "bwd", "requires")

    def __init__(self, op, inputs, bwd, requires):
        self.op = op
        self.inputs = inputs
        self.bwd = bwd
        self.requires = requires


class Tape:
    """Append-only record of one forward computation."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, values, param: bool = False) -> Tensor:
        """Register an input tensor; param=True marks it for gradients."""
        arr = np.array(values, dtype=np.float64)
        node = _Node("leaf", (), None, param)
        self._nodes.append(node)
        return Tensor(self, len(self._nodes) - 1, arr)

    def _record(self, op: str, inputs: tuple[Tensor, ...], values: np.ndarray,
                bwd: Callable | None) -> Tensor:
        requires = any(self._nodes[t.node_id].requires for t in inputs)
        node = _Node(op, tuple(t.node_id for t in inputs), bwd if requires else None,
                     requires)
        self._nodes.append(node)
        return Tensor(self, len(self._nodes) - 1, values)


def _as_tensor(tape: Tape, x) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is not tape:
            raise ShapeError("tensors from different tapes cannot be combined")
        return x
    return tape.leaf(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives


def matmul(a: Tensor, b) -> Tensor:
    b = _as_tensor(a.tape, b)
    av, bv = a.values, b.values
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {av.shape} x {bv.shape}")
    out = av @ bv

    def bwd(g, acc):
        acc(a, g @ bv.T)
        acc(b, av.T @ g)

    return a.tape._record("matmul", (a, b), out, bwd)


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(a.tape, b)
    try:
        out = a.values + b.values
    except ValueError:
        raise ShapeError(f"add shape mismatch: {a.values.shape} + {b.values.shape}")

    def bwd(g, acc):
        acc(a, _unbroadcast(g, a.values.shape))
        acc(b, _unbroadcast(g, b.values.shape))

    return a.tape._record("add", (a, b), out, bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(a.tape, b)
    try:
        out = a.values * b.values
    except ValueError:
        raise ShapeError(f"mul shape mismatch: {a.values.shape} * {b.values.shape}")
    av, bv = a.values, b.values

    def bwd(g, acc):
        acc(a, _unbroadcast(g * bv, av.shape))
        acc(b, _unbroadcast(g * av, bv.shape))

    return a.tape._record("mul", (a, b), out, bwd)


def negate(a: Tensor) -> Tensor:
    def bwd(g, acc):
        acc(a, -g)

    return a.tape._record("negate", (a,), -a.values, bwd)


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid_values(a.values)

    def bwd(g, acc):
        acc(a, g * s * (1.0 - s))

    return a.tape._record("sigmoid", (a,), s, bwd)


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.values)

    def bwd(g, acc):
        acc(a, g * (1.0 - t * t))

    return a.tape._record("tanh", (a,), t, bwd)


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.values)

    def bwd(g, acc):
        acc(a, g * e)

    return a.tape._record("exp", (a,), e, bwd)


def log(a: Tensor) -> Tensor:
    av = a.values

    def bwd(g, acc):
        acc(a, g / av)

    return a.tape._record("log", (a,), np.log(av), bwd)


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed stably; derivative is sigmoid(x)."""
    av = a.values
    out = np.logaddexp(0.0, av)

    def bwd(g, acc):
        acc(a, g * _sigmoid_values(av))

    return a.tape._record("softplus", (a,), out, bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    tape = tensors[0].tape
    tensors = [_as_tensor(tape, t) for t in tensors]
    out = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g, acc):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [np.s_[:]] * g.ndim
            idx[axis] = np.s_[lo:hi]
            acc(t, g[tuple(idx)])

    return tape._record("concat", tuple(tensors), out, bwd)


def slice_(a: Tensor, key) -> Tensor:
    """Basic slicing (slices / ints per axis); gradient scatters back."""
    out = np.array(a.values[key])
    shape = a.values.shape

    def bwd(g, acc):
        full = np.zeros(shape)
        full[key] += g
        acc(a, full)

    return a.tape._record("slice", (a,), out, bwd)


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    out = a.values.sum(axis=axis)
    shape = a.values.shape

    def bwd(g, acc):
        if axis is None:
            acc(a, np.broadcast_to(g, shape).copy())
        else:
            acc(a, np.broadcast_to(np.expand_dims(g, axis), shape).copy())

    return a.tape._record("sum", (a,), out, bwd)


def mean(a: Tensor, axis: int | None = None) -> Tensor:
    n = a.values.size if axis is None else a.values.shape[axis]
    out = a.values.mean(axis=axis)
    shape = a.values.shape

    def bwd(g, acc):
        if axis is None:
            acc(a, np.broadcast_to(g / n, shape).copy())
        else:
            acc(a, np.broadcast_to(np.expand_dims(g / n, axis), shape).copy())

    return a.tape._record("mean", (a,), out, bwd)


def log_sum_exp(a: Tensor, axis: int) -> Tensor:
    """logsumexp with max-subtraction, so huge inputs do not overflow."""
    av = a.values
    m = np.max(av, axis=axis, keepdims=True)
    shifted = np.exp(av - m)
    total = shifted.sum(axis=axis, keepdims=True)
    out = np.squeeze(m + np.log(total), axis=axis)
    softmax = shifted / total

    def bwd(g, acc):
        acc(a, np.expand_dims(g, axis) * softmax)

    return a.tape._record("log_sum_exp", (a,), out, bwd)


# ---------------------------------------------------------------------------
# reverse pass


def backward(output: Tensor) -> dict[int, np.ndarray]:
    """Accumulate gradients of a scalar output w.r.t. every node that needs one.

    Returns a map node_id -> gradient array (same shape as the node's value).
    """
    if output.values.size != 1:
        raise ShapeError(f"backward requires a scalar output, got shape {output.values.shape}")
    tape = output.tape
    nodes = tape._nodes
    grads: dict[int, np.ndarray] = {output.node_id: np.ones_like(output.values)}

    def acc(tensor: Tensor, g: np.ndarray):
        nid = tensor.node_id
        if not nodes[nid].requires:
            return
        if nid in grads:
            grads[nid] = grads[nid] + g
        else:
            grads[nid] = np.array(g, dtype=np.float64)

    for nid in range(output.node_id, -1, -1):
        node = nodes[nid]
        if nid not in grads or node.bwd is None:
            continue
        node.bwd(grads[nid], acc)
    return grads


def grad_check(build: Callable, params: list[np.ndarray], epsilon: float = 1e-5) -> float:
    """Compare reverse-mode gradients against central finite differences.

    ``build(params)`` must be pure: it constructs a fresh tape and returns
    ``(scalar_output, param_tensors)`` with one tensor per entry of params.
    Above 10k total coordinates a seeded subset of 2048 is checked. Returns
    the max over checked coordinates of |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise ValueError(f"epsilon {epsilon} outside [1e-6, 1e-4]")
    out, ptensors = build(params)
    grads = backward(out)
    ad = [grads.get(t.node_id, np.zeros_like(p)) for t, p in zip(ptensors, params)]

    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if len(coords) > 10_000:
        gen = stream("grad_check", len(coords))
        pick = gen.choice(len(coords), size=2048, replace=False)
        coords = [coords[k] for k in sorted(pick)]

    def value_at(perturbed: list[np.ndarray]) -> float:
        o, _ = build(perturbed)
        return float(o.values.reshape(()))

    max_err = 0.0
    for i, j in coords:
        plus = [p.copy() for p in params]
        plus[i].flat[j] += epsilon
        minus = [p.copy() for p in params]
        minus[i].flat[j] -= epsilon
        g_fd = (value_at(plus) - value_at(minus)) / (2.0 * epsilon)
        g_ad = ad[i].flat[j]
        err = abs(g_ad - g_fd) / max(1.0, abs(g_ad), abs(g_fd))
        max_err = max(max_err, err)
    return max_err
