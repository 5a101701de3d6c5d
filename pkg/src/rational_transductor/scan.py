"""Log-depth associative scans over the matrix monoid.

Forward: ``h_t = M_t h_{t-1}`` via inclusive prefix products
``P_t = M_t ... M_1`` computed with a Kogge-Stone schedule (one batched
matmul per level, ``ceil(log2 T)`` levels).

Backward: the adjoint recurrence ``delta_{t-1} = M_t^T delta_t + v_{t-1}``
is lifted to ``(d+1)``-dimensional homogeneous coordinates,

    B_t = [[M_t^T, v_{t-1}], [0, 1]],

so that ``[delta_{t-1}; 1] = B_t [delta_t; 1]`` and every adjoint is a
suffix product of the ``B_t`` applied to ``[delta_T; 1]``.

Array conventions: ``ops`` has shape ``(..., T, d, d)`` with ``ops[..., t-1]``
holding ``M_t``.  Forward states include ``h_0`` (shape ``(..., T+1, d)``);
backward adjoints include ``delta_T`` (shape ``(..., T+1, d)``).
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError, ShapeError

OVERFLOW_LIMIT = 1e300
SEQUENTIAL_BELOW = 32


def scan_depth(T: int) -> int:
    """Number of Kogge-Stone levels for length ``T``: ``ceil(log2 T)``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return (T - 1).bit_length()


def _guard(x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)) or (x.size and float(np.max(np.abs(x))) > OVERFLOW_LIMIT):
        raise NumericError("scan overflow: entries exceed 1e300 or are non-finite")
    return x


def prefix_products(mats: np.ndarray, reverse: bool = False) -> tuple[np.ndarray, int]:
    """Inclusive Kogge-Stone scan of matrix products along axis ``-3``.

    ``reverse=False`` returns ``P[t] = mats[t] @ ... @ mats[0]``;
    ``reverse=True`` returns ``S[t] = mats[t] @ ... @ mats[T-1]``.
    All combines of a level are one batched matmul; the second return value
    is the number of levels executed.
    """
    P = np.array(mats, copy=True)
    T = P.shape[-3]
    stride = 1
    levels = 0
    while stride < T:
        with np.errstate(over="ignore", invalid="ignore"):  # reported by _guard
            if reverse:
                P[..., : T - stride, :, :] = P[..., : T - stride, :, :] @ P[..., stride:, :, :]
            else:
                P[..., stride:, :, :] = P[..., stride:, :, :] @ P[..., : T - stride, :, :]
        stride *= 2
        levels += 1
        _guard(P)
    return P, levels


def _lift_forward(ops: np.ndarray, biases: np.ndarray) -> np.ndarray:
    d = ops.shape[-1]
    lifted = np.zeros(ops.shape[:-2] + (d + 1, d + 1), dtype=np.result_type(ops, biases))
    lifted[..., :d, :d] = ops
    lifted[..., :d, d] = biases
    lifted[..., d, d] = 1
    return lifted


def _check_ops(ops: np.ndarray, vec: np.ndarray, what: str) -> None:
    if ops.ndim < 3 or ops.shape[-1] != ops.shape[-2]:
        raise ShapeError(f"ops must be (..., T, d, d), got {ops.shape}")
    if vec.shape[-1] != ops.shape[-1]:
        raise ShapeError(f"{what} dim {vec.shape[-1]} does not match ops dim {ops.shape[-1]}")


def sequential_forward(ops: np.ndarray, alpha: np.ndarray, biases: np.ndarray | None = None) -> np.ndarray:
    """Plain loop reference for :func:`scan_forward`."""
    ops = np.asarray(ops)
    alpha = np.asarray(alpha)
    T = ops.shape[-3]
    batch = np.broadcast_shapes(ops.shape[:-3], alpha.shape[:-1])
    h = np.broadcast_to(alpha, batch + alpha.shape[-1:]).astype(np.result_type(ops, alpha), copy=True)
    out = np.empty(batch + (T + 1, ops.shape[-1]), dtype=h.dtype)
    out[..., 0, :] = h
    for t in range(T):
        h = np.einsum("...ij,...j->...i", ops[..., t, :, :], h)
        if biases is not None:
            h = h + biases[..., t, :]
        out[..., t + 1, :] = h
    return _guard(out)


def scan_forward(
    ops: np.ndarray,
    alpha: np.ndarray,
    biases: np.ndarray | None = None,
    schedule: str = "kogge_stone",
) -> np.ndarray:
    """States ``h_0 .. h_T`` of ``h_t = M_t h_{t-1} (+ b_t)``.

    ``schedule`` is ``"kogge_stone"``, ``"sequential"`` or ``"auto"`` (the
    loop below 32 steps, the scan otherwise).  Affine recurrences are lifted
    to ``d+1`` homogeneous coordinates before scanning.
    """
    ops = np.asarray(ops)
    alpha = np.asarray(alpha)
    _check_ops(ops, alpha, "alpha")
    if biases is not None:
        biases = np.asarray(biases)
        if biases.shape[-2:] != ops.shape[-3:-1]:
            raise ShapeError(f"biases shape {biases.shape} does not match ops {ops.shape}")
    T = ops.shape[-3]
    if schedule == "auto":
        schedule = "sequential" if T < SEQUENTIAL_BELOW else "kogge_stone"
    if schedule == "sequential" or T == 0:
        return sequential_forward(ops, alpha, biases)
    if schedule != "kogge_stone":
        raise ValueError(f"unknown schedule {schedule!r}")

    d = ops.shape[-1]
    if biases is not None:
        mats = _lift_forward(ops, biases)
        start = np.concatenate([alpha, np.ones(alpha.shape[:-1] + (1,), dtype=alpha.dtype)], axis=-1)
    else:
        mats, start = ops, alpha
    P, _ = prefix_products(mats)
    h = np.einsum("...tij,...j->...ti", P, start)
    batch = h.shape[:-2]
    out = np.empty(batch + (T + 1, d), dtype=h.dtype)
    out[..., 0, :] = np.broadcast_to(alpha, batch + (d,))
    out[..., 1:, :] = h[..., :d]
    return out


def sequential_backward(ops: np.ndarray, injections: np.ndarray, delta_T: np.ndarray) -> np.ndarray:
    """Loop reference for :func:`scan_backward`."""
    ops = np.asarray(ops)
    T = ops.shape[-3]
    delta = np.asarray(delta_T).astype(np.result_type(ops, injections, delta_T), copy=True)
    batch = np.broadcast_shapes(ops.shape[:-3], injections.shape[:-2], delta.shape[:-1])
    delta = np.broadcast_to(delta, batch + delta.shape[-1:]).copy()
    out = np.empty(batch + (T + 1, ops.shape[-1]), dtype=delta.dtype)
    out[..., T, :] = delta
    for t in range(T, 0, -1):
        delta = np.einsum("...ji,...j->...i", ops[..., t - 1, :, :], delta) + injections[..., t - 1, :]
        out[..., t - 1, :] = delta
    return _guard(out)


def scan_backward(
    ops: np.ndarray,
    injections: np.ndarray,
    delta_T: np.ndarray,
    schedule: str = "kogge_stone",
) -> np.ndarray:
    """Adjoints ``delta_0 .. delta_T``; ``injections[..., t]`` holds ``v_t`` for t < T."""
    ops = np.asarray(ops)
    injections = np.asarray(injections)
    delta_T = np.asarray(delta_T)
    _check_ops(ops, delta_T, "delta_T")
    T = ops.shape[-3]
    if injections.shape[-2:] != (T, ops.shape[-1]):
        raise ShapeError(f"injections shape {injections.shape} must end with ({T}, {ops.shape[-1]})")
    if schedule == "auto":
        schedule = "sequential" if T < SEQUENTIAL_BELOW else "kogge_stone"
    if schedule == "sequential" or T == 0:
        return sequential_backward(ops, injections, delta_T)
    if schedule != "kogge_stone":
        raise ValueError(f"unknown schedule {schedule!r}")

    d = ops.shape[-1]
    batch = np.broadcast_shapes(ops.shape[:-3], injections.shape[:-2], delta_T.shape[:-1])
    dtype = np.result_type(ops, injections, delta_T)
    B = np.zeros(batch + (T, d + 1, d + 1), dtype=dtype)
    B[..., :d, :d] = np.swapaxes(ops, -1, -2)
    B[..., :d, d] = injections
    B[..., d, d] = 1
    S, _ = prefix_products(B, reverse=True)
    start = np.concatenate([np.broadcast_to(delta_T, batch + (d,)), np.ones(batch + (1,), dtype=dtype)], axis=-1)
    out = np.empty(batch + (T + 1, d), dtype=dtype)
    out[..., :T, :] = np.einsum("...tij,...j->...ti", S, start)[..., :d]
    out[..., T, :] = start[..., :d]
    return out
