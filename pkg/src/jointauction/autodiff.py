"""Minimal reverse-mode automatic differentiation on numpy arrays.

A ``Node`` wraps a dense array value together with the closures needed to
push gradients back to its parents. Operations accept either Nodes or plain
arrays/scalars; plain inputs are treated as constants and receive no
gradient. ``backward(root)`` runs one reverse pass over the graph, visiting
each node exactly once in reverse topological order and leaving gradients on
``node.grad``.

Every primitive checks its output for NaN/Inf by default; hot loops can
suspend the check with ``no_finite_check()``.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionError, DomainError, NumericError

_FINITE_CHECK = True


@contextmanager
def no_finite_check():
    """Temporarily disable per-primitive NaN/Inf checking."""
    global _FINITE_CHECK
    prev = _FINITE_CHECK
    _FINITE_CHECK = False
    try:
        yield
    finally:
        _FINITE_CHECK = prev


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "grad", "_vjps")

    def __init__(self, value, vjps: tuple = ()):
        value = np.asarray(value)
        if _FINITE_CHECK and not np.isfinite(value).all():
            raise NumericError("non-finite value produced in computation graph")
        self.value = value
        self.grad = None
        # Pairs (parent Node, vjp), where vjp maps the output gradient to the
        # parent's gradient contribution.
        self._vjps = vjps

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, dtype={self.value.dtype})"


def _value(x):
    if isinstance(x, Node):
        return x.value
    if isinstance(x, (float, int)):
        # Keep python scalars weak so float32 graphs stay float32.
        return x
    return np.asarray(x)


def _vjps_for(pairs) -> tuple:
    return tuple((p, fn) for p, fn in pairs if isinstance(p, Node))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient over axes that were broadcast to produce ``grad``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(root: Node) -> None:
    """Accumulate gradients of a scalar root into every reachable node."""
    if root.value.size != 1:
        raise DomainError(f"backward needs a scalar root, got shape {root.value.shape}")
    # Iterative post-order topological sort.
    topo: list[Node] = []
    state: dict[int, int] = {}
    stack: list[Node] = [root]
    while stack:
        node = stack[-1]
        st = state.get(id(node), 0)
        if st == 0:
            state[id(node)] = 1
            for parent, _ in node._vjps:
                if state.get(id(parent), 0) == 0:
                    stack.append(parent)
        else:
            stack.pop()
            if st == 1:
                state[id(node)] = 2
                topo.append(node)
    for node in topo:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node._vjps:
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Node:
    av, bv = _value(a), _value(b)
    out = av + bv
    return Node(out, _vjps_for(((a, lambda g: _unbroadcast(g, av.shape)),
                                (b, lambda g: _unbroadcast(g, bv.shape)))))


def sub(a, b) -> Node:
    av, bv = _value(a), _value(b)
    out = av - bv
    return Node(out, _vjps_for(((a, lambda g: _unbroadcast(g, av.shape)),
                                (b, lambda g: _unbroadcast(-g, bv.shape)))))


def neg(a) -> Node:
    return Node(-_value(a), _vjps_for(((a, lambda g: -g),)))


def mul(a, b) -> Node:
    av, bv = _value(a), _value(b)
    out = av * bv
    return Node(out, _vjps_for(((a, lambda g: _unbroadcast(g * bv, av.shape)),
                                (b, lambda g: _unbroadcast(g * av, bv.shape)))))


def div(a, b) -> Node:
    av, bv = _value(a), _value(b)
    out = av / bv
    return Node(out, _vjps_for(((a, lambda g: _unbroadcast(g / bv, av.shape)),
                                (b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)))))


def square(a) -> Node:
    av = _value(a)
    return Node(av * av, _vjps_for(((a, lambda g: 2.0 * g * av),)))


def matmul(a, b) -> Node:
    av, bv = np.asarray(_value(a)), np.asarray(_value(b))
    if av.ndim == 0 or bv.ndim == 0 or av.shape[-1] != bv.shape[-2 if bv.ndim > 1 else 0]:
        raise DimensionError(f"matmul shape mismatch: {av.shape} @ {bv.shape}")

    if bv.ndim == 2:
        # Dense-layer case: fold leading axes into one GEMM, both directions.
        k, p = bv.shape
        if av.ndim == 1:
            out = av @ bv

            def grad_a(g):
                return g @ bv.T

            def grad_b(g):
                return np.outer(av, g)
        else:
            lead = av.shape[:-1]
            a2 = av.reshape(-1, k)
            out = (a2 @ bv).reshape(lead + (p,))

            def grad_a(g):
                return (g.reshape(-1, p) @ bv.T).reshape(av.shape)

            def grad_b(g):
                return a2.T @ g.reshape(-1, p)

        return Node(out, _vjps_for(((a, grad_a), (b, grad_b))))

    out = av @ bv

    def grad_a_gen(g):
        return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)

    def grad_b_gen(g):
        return _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)

    return Node(out, _vjps_for(((a, grad_a_gen), (b, grad_b_gen))))


def relu(a) -> Node:
    av = _value(a)
    mask = av > 0
    return Node(np.where(mask, av, 0.0), _vjps_for(((a, lambda g: g * mask),)))


def sigmoid(a) -> Node:
    av = _value(a)
    out = expit(av)
    return Node(out, _vjps_for(((a, lambda g: g * out * (1.0 - out)),)))


def softmax(a, axis: int = -1) -> Node:
    av = _value(a)
    shifted = av - av.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - inner)

    return Node(out, _vjps_for(((a, grad),)))


def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(ax % ndim for ax in axes)


def mean(a, axis=None, keepdims: bool = False) -> Node:
    av = _value(a)
    axes = _norm_axes(axis, av.ndim)
    count = math.prod(av.shape[ax] for ax in axes) if av.ndim else 1
    out = av.mean(axis=axes, keepdims=keepdims)

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g / count, av.shape)

    return Node(out, _vjps_for(((a, grad),)))


def sum_(a, axis=None, keepdims: bool = False) -> Node:
    av = _value(a)
    axes = _norm_axes(axis, av.ndim)
    out = av.sum(axis=axes, keepdims=keepdims)

    def grad(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, av.shape)

    return Node(out, _vjps_for(((a, grad),)))


def concat(parts: Sequence, axis: int = -1) -> Node:
    values = [_value(p) for p in parts]
    out = np.concatenate(values, axis=axis)
    ax = axis % out.ndim
    offsets = np.cumsum([0] + [v.shape[ax] for v in values])

    vjps = []
    for part, start, stop in zip(parts, offsets[:-1], offsets[1:]):
        if isinstance(part, Node):
            sl = tuple(slice(None) if d != ax else slice(int(start), int(stop)) for d in range(out.ndim))
            vjps.append((part, lambda g, sl=sl: g[sl]))
    return Node(out, tuple(vjps))


def reshape(a, shape) -> Node:
    av = _value(a)
    return Node(av.reshape(shape), _vjps_for(((a, lambda g: g.reshape(av.shape)),)))


def swapaxes(a, ax1: int, ax2: int) -> Node:
    av = _value(a)
    return Node(np.swapaxes(av, ax1, ax2), _vjps_for(((a, lambda g: np.swapaxes(g, ax1, ax2)),)))


def broadcast_to(a, shape) -> Node:
    av = _value(a)
    return Node(np.broadcast_to(av, shape).copy(), _vjps_for(((a, lambda g: _unbroadcast(g, av.shape)),)))


def getitem(a, idx) -> Node:
    av = _value(a)
    out = av[idx]
    parts = idx if isinstance(idx, tuple) else (idx,)
    fancy = any(isinstance(p, (np.ndarray, list)) for p in parts)

    def grad(g):
        buf = np.zeros_like(av)
        if fancy:
            np.add.at(buf, idx, g)
        else:
            buf[idx] += g
        return buf

    return Node(out, _vjps_for(((a, grad),)))


def minimum(a, b) -> Node:
    """Elementwise min; gradient flows to the smaller argument, split 0.5/0.5 at ties."""
    av, bv = _value(a), _value(b)
    out = np.minimum(av, bv)
    tie = av == bv
    wa = np.where(av < bv, 1.0, np.where(tie, 0.5, 0.0))
    wb = 1.0 - wa
    return Node(out, _vjps_for(((a, lambda g: _unbroadcast(g * wa, av.shape)),
                                (b, lambda g: _unbroadcast(g * wb, bv.shape)))))


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Node:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    xv, gv, bv = _value(x), _value(gain), _value(bias)
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xn = xc * inv
    out = xn * gv + bv
    d = xv.shape[-1]

    def grad_x(g):
        gxn = g * gv
        t1 = gxn.mean(axis=-1, keepdims=True)
        t2 = (gxn * xn).mean(axis=-1, keepdims=True)
        return inv * (gxn - t1 - xn * t2)

    def grad_gain(g):
        return _unbroadcast(g * xn, gv.shape)

    def grad_bias(g):
        return _unbroadcast(g, bv.shape)

    return Node(out, _vjps_for(((x, grad_x), (gain, grad_gain), (bias, grad_bias))))


def scaled_dot_attention(q, k, v, heads: int = 1) -> Node:
    """Multi-head scaled dot-product attention over the second-to-last axis.

    ``q``, ``k``, ``v`` have shape (..., seq, d) with d divisible by heads.
    Composed from graph primitives, so gradients follow automatically.
    """
    d = _value(q).shape[-1]
    if d % heads:
        raise DimensionError(f"feature dim {d} not divisible by {heads} heads")
    hd = d // heads

    def split(x):
        xv = _value(x)
        lead = xv.shape[:-2]
        seq = xv.shape[-2]
        x = reshape(x, lead + (seq, heads, hd))
        return swapaxes(x, -2, -3)  # (..., heads, seq, hd)

    qh, kh, vh = split(q), split(k), split(v)
    scores = mul(matmul(qh, swapaxes(kh, -1, -2)), 1.0 / math.sqrt(hd))
    weights = softmax(scores, axis=-1)
    ctx = matmul(weights, vh)  # (..., heads, seq, hd)
    ctx = swapaxes(ctx, -2, -3)  # (..., seq, heads, hd)
    cv = _value(ctx)
    return reshape(ctx, cv.shape[:-2] + (d,))


def straight_through(quantized, raw: Node) -> Node:
    """Forward the quantized values, route the gradient to ``raw`` unchanged."""
    qv = _value(quantized)
    rv = _value(raw)
    if qv.shape != rv.shape:
        raise DimensionError(f"straight-through shapes differ: {qv.shape} vs {rv.shape}")
    return Node(qv.copy(), _vjps_for(((raw, lambda g: g),)))


def stop_gradient(a) -> np.ndarray:
    """Detach a value from the graph."""
    return _value(a)


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def grad_check(fn: Callable[[dict[str, Node]], Node], params: dict[str, np.ndarray], h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``fn`` maps a dict of parameter Nodes to a scalar Node. The error metric
    is |analytic - numeric| / max(1, |numeric|), maximized over all
    parameter entries.
    """
    if h <= 0:
        raise DomainError("h must be positive")
    arrays = {k: np.asarray(v, dtype=float) for k, v in params.items()}
    nodes = {k: Node(v) for k, v in arrays.items()}
    out = fn(nodes)
    backward(out)

    def eval_at(arrs) -> float:
        return float(_value(fn({k: Node(v) for k, v in arrs.items()})).item())

    worst = 0.0
    for name, arr in arrays.items():
        analytic = nodes[name].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = eval_at(arrays)
            flat[i] = orig - h
            down = eval_at(arrays)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
