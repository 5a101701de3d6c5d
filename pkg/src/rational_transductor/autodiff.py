"""Tape-based reverse-mode differentiation over a small operation vocabulary.

A :class:`Tape` is an append-only list of nodes.  Every node caches its
forward value, so :func:`backward` only needs one reverse sweep.  Operations
are looked up in a registry; extra kinds (the rational scan) are added with
:func:`register_op`.

Example::

    tape = Tape()
    w = tape.param("w", np.ones((2, 3)))
    x = tape.const(np.arange(3.0).reshape(3, 1))
    loss = tape.sum(tape.matmul(w, x))
    grads = backward(tape, loss)        # {"w": ...}
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import NumericError, ShapeError
from .linalg_core import solve_small

GradStore = dict  # parameter name -> gradient array of the parameter's shape


@dataclass
class Node:
    op: str
    inputs: tuple
    attrs: dict
    value: np.ndarray
    cache: Any = None
    name: str | None = None


@dataclass(frozen=True)
class OpDef:
    forward: Callable
    vjp: Callable


OPS: dict[str, OpDef] = {}


def register_op(kind: str, forward: Callable, vjp: Callable) -> None:
    """Add an operation kind.

    ``forward(*values, **attrs)`` returns ``(out, cache)``;
    ``vjp(g, values, out, cache, **attrs)`` returns one gradient (or ``None``)
    per input.
    """
    OPS[kind] = OpDef(forward, vjp)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _append(self, node: Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def param(self, name: str, value) -> int:
        if name in self.params:
            raise ValueError(f"parameter {name!r} already on tape")
        nid = self._append(Node("param", (), {}, np.asarray(value), name=name))
        self.params[name] = nid
        return nid

    def const(self, value) -> int:
        return self._append(Node("const", (), {}, np.asarray(value)))

    def value(self, nid: int) -> np.ndarray:
        return self.nodes[nid].value

    def record(self, op_kind: str, *inputs: int, **attrs) -> int:
        if op_kind not in OPS:
            raise ValueError(f"unknown op kind {op_kind!r}")
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise ValueError(f"input node {i} is not on this tape")
        vals = [self.nodes[i].value for i in inputs]
        out, cache = OPS[op_kind].forward(*vals, **attrs)
        return self._append(Node(op_kind, tuple(inputs), attrs, out, cache))

    # Convenience wrappers, one per op kind.
    def matmul(self, a, b):
        return self.record("matmul", a, b)

    def add(self, a, b):
        return self.record("add", a, b)

    def sub(self, a, b):
        return self.record("add", a, self.record("scale", b, s=-1.0))

    def scale(self, x, s: float):
        return self.record("scale", x, s=float(s))

    def mul(self, x, y):
        return self.record("mul", x, y)

    def solve(self, a, b):
        return self.record("solve", a, b)

    def transpose(self, x, axes=None):
        return self.record("transpose", x, axes=axes)

    def reshape(self, x, shape):
        return self.record("reshape", x, shape=tuple(shape))

    def softmax(self, x, axis=-1, mask=None):
        return self.record("softmax", x, axis=axis, mask=mask)

    def layernorm(self, x, gain, bias, eps=1e-5):
        return self.record("layernorm", x, gain, bias, eps=eps)

    def relu(self, x):
        return self.record("relu", x)

    def sigmoid(self, x):
        return self.record("sigmoid", x)

    def embedding(self, table, indices):
        return self.record("embedding", table, indices=np.asarray(indices))

    def concat(self, xs, axis=-1):
        return self.record("concat", *xs, axis=axis)

    def slice(self, x, key):
        return self.record("slice", x, key=key)

    def sum(self, x, axis=None, keepdims=False):
        return self.record("sum", x, axis=axis, keepdims=keepdims)

    def cross_entropy(self, logits, targets, weights=None):
        return self.record("cross_entropy", logits, targets=np.asarray(targets), weights=weights)

    def mse(self, pred, target):
        return self.record("mse", pred, target)


# ---------------------------------------------------------------- op kinds


def _matmul_fwd(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes {a.shape} @ {b.shape}")
    return np.matmul(a, b), None


def _matmul_vjp(g, vals, out, cache):
    a, b = vals
    return _unbroadcast(g @ _swap(b), a.shape), _unbroadcast(_swap(a) @ g, b.shape)


def _add_fwd(a, b):
    try:
        return a + b, None
    except ValueError as exc:
        raise ShapeError(f"add shapes {a.shape} + {b.shape}") from exc


def _add_vjp(g, vals, out, cache):
    return _unbroadcast(g, vals[0].shape), _unbroadcast(g, vals[1].shape)


def _scale_fwd(x, s):
    return x * x.dtype.type(s), None


def _scale_vjp(g, vals, out, cache, s):
    return (g * g.dtype.type(s),)


def _mul_fwd(x, y):
    try:
        return x * y, None
    except ValueError as exc:
        raise ShapeError(f"mul shapes {x.shape} * {y.shape}") from exc


def _mul_vjp(g, vals, out, cache):
    x, y = vals
    return _unbroadcast(g * y, x.shape), _unbroadcast(g * x, y.shape)


def _solve_fwd(a, b):
    return solve_small(a, b), None


def _solve_vjp(g, vals, out, cache):
    a, b = vals
    gb = solve_small(_swap(a), g)
    ga = -gb @ _swap(out)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _transpose_fwd(x, axes=None):
    if axes is None:
        return _swap(x), None
    return np.transpose(x, axes), None


def _transpose_vjp(g, vals, out, cache, axes=None):
    if axes is None:
        return (_swap(g),)
    return (np.transpose(g, np.argsort(axes)),)


def _reshape_fwd(x, shape):
    return x.reshape(shape), None


def _reshape_vjp(g, vals, out, cache, shape):
    return (g.reshape(vals[0].shape),)


def _softmax_fwd(x, axis=-1, mask=None):
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True), None


def _softmax_vjp(g, vals, y, cache, axis=-1, mask=None):
    return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)


def _layernorm_fwd(x, gain, bias, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv)


def _layernorm_vjp(g, vals, out, cache, eps=1e-5):
    x, gain, bias = vals
    xhat, inv = cache
    gx_hat = g * gain
    gx = inv * (
        gx_hat - gx_hat.mean(axis=-1, keepdims=True) - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
    )
    return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, bias.shape)


def _relu_fwd(x):
    return np.maximum(x, 0), None


def _relu_vjp(g, vals, out, cache):
    return (g * (vals[0] > 0),)


def _sigmoid_fwd(x):
    return 1.0 / (1.0 + np.exp(-x)), None


def _sigmoid_vjp(g, vals, y, cache):
    return (g * y * (1 - y),)


def _embedding_fwd(table, indices):
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise ShapeError(f"embedding index out of range for table of {table.shape[0]} rows")
    return table[indices], None


def _embedding_vjp(g, vals, out, cache, indices):
    table = vals[0]
    flat = indices.reshape(-1)
    gt = np.zeros((table.shape[0], flat.size), dtype=g.dtype)
    gt[flat, np.arange(flat.size)] = 1
    grad = (gt @ g.reshape(flat.size, -1)).reshape(table.shape)
    return (grad,)


def _concat_fwd(*xs, axis=-1):
    return np.concatenate(xs, axis=axis), None


def _concat_vjp(g, vals, out, cache, axis=-1):
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return tuple(np.split(g, sizes, axis=axis))


def _slice_fwd(x, key):
    return x[key], None


def _slice_vjp(g, vals, out, cache, key):
    gx = np.zeros_like(vals[0])
    gx[key] += g
    return (gx,)


def _sum_fwd(x, axis=None, keepdims=False):
    return np.sum(x, axis=axis, keepdims=keepdims), None


def _sum_vjp(g, vals, out, cache, axis=None, keepdims=False):
    x = vals[0]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _xent_fwd(logits, targets, weights=None):
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy logits {logits.shape} vs targets {targets.shape}")
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    logz = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logz
    nll = -np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    w = np.ones_like(nll) if weights is None else np.asarray(weights, dtype=nll.dtype)
    total = w.sum()
    return np.asarray((nll * w).sum() / total, dtype=logits.dtype), (logp, w, total)


def _xent_vjp(g, vals, out, cache, targets, weights=None):
    logp, w, total = cache
    p = np.exp(logp)
    onehot = np.zeros_like(p)
    np.put_along_axis(onehot, targets[..., None], 1.0, axis=-1)
    return ((p - onehot) * (w / total)[..., None] * g,)


def _mse_fwd(pred, target):
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes {pred.shape} vs {target.shape}")
    d = pred - target
    return np.asarray((d * d).mean(), dtype=pred.dtype), d


def _mse_vjp(g, vals, out, d):
    gd = (2.0 / d.size) * d * g
    return gd, -gd


for _kind, _f, _b in [
    ("matmul", _matmul_fwd, _matmul_vjp),
    ("add", _add_fwd, _add_vjp),
    ("scale", _scale_fwd, _scale_vjp),
    ("mul", _mul_fwd, _mul_vjp),
    ("solve", _solve_fwd, _solve_vjp),
    ("transpose", _transpose_fwd, _transpose_vjp),
    ("reshape", _reshape_fwd, _reshape_vjp),
    ("softmax", _softmax_fwd, _softmax_vjp),
    ("layernorm", _layernorm_fwd, _layernorm_vjp),
    ("relu", _relu_fwd, _relu_vjp),
    ("sigmoid", _sigmoid_fwd, _sigmoid_vjp),
    ("embedding", _embedding_fwd, _embedding_vjp),
    ("concat", _concat_fwd, _concat_vjp),
    ("slice", _slice_fwd, _slice_vjp),
    ("sum", _sum_fwd, _sum_vjp),
    ("cross_entropy", _xent_fwd, _xent_vjp),
    ("mse", _mse_fwd, _mse_vjp),
]:
    register_op(_kind, _f, _b)


# ---------------------------------------------------------------- backward


def backward(
    tape: Tape,
    loss_node: int | None = None,
    seeds: dict[int, np.ndarray] | None = None,
    return_nodes: bool = False,
):
    """Reverse sweep from ``loss_node`` (scalar) and/or explicit ``seeds``.

    Returns the GradStore over named parameters; with ``return_nodes`` the
    per-node gradient dict is returned as well.
    """
    grads: dict[int, np.ndarray] = {}
    if loss_node is not None:
        lv = tape.nodes[loss_node].value
        if lv.size != 1:
            raise ShapeError(f"loss node {loss_node} is not scalar (shape {lv.shape})")
        grads[loss_node] = np.ones_like(lv)
    for nid, g in (seeds or {}).items():
        grads[nid] = grads.get(nid, 0) + np.asarray(g)
    if not grads:
        raise ValueError("backward needs a loss node or seeds")

    start = max(grads)
    for nid in range(start, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        node = tape.nodes[nid]
        if not np.all(np.isfinite(g)):
            label = node.name or f"{node.op}#{nid}"
            raise NumericError(f"non-finite gradient at node {label}")
        if not node.inputs:
            continue
        vals = [tape.nodes[i].value for i in node.inputs]
        in_grads = OPS[node.op].vjp(g, vals, node.value, node.cache, **node.attrs)
        for i, gi in zip(node.inputs, in_grads):
            if gi is None:
                continue
            grads[i] = grads[i] + gi if i in grads else gi
        if not return_nodes:
            del grads[nid]

    store: GradStore = {}
    for name, nid in tape.params.items():
        g = grads.get(nid)
        store[name] = np.zeros_like(tape.nodes[nid].value) if g is None else np.asarray(g).reshape(tape.nodes[nid].value.shape)
    if return_nodes:
        return store, grads
    return store


def grad_check(f: Callable, params: dict[str, np.ndarray], eps: float = 1e-5) -> float:
    """Max over parameters of the normwise relative error vs central differences.

    ``f(params)`` must build a fresh tape and return ``(tape, loss_node)``.
    For each parameter the error is ``max|g - fd| / max(max|g|, max|fd|)``.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    tape, loss = f(params)
    analytic = backward(tape, loss)
    worst = 0.0
    for name, p in params.items():
        fd = np.zeros_like(p)
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            t, l = f(params)
            up = float(t.value(l))
            flat[i] = orig - eps
            t, l = f(params)
            down = float(t.value(l))
            flat[i] = orig
            fd.reshape(-1)[i] = (up - down) / (2 * eps)
        g = analytic.get(name, np.zeros_like(p))
        scale = max(np.max(np.abs(g)), np.max(np.abs(fd)), 1e-300)
        worst = max(worst, float(np.max(np.abs(g - fd)) / scale))
    return worst
