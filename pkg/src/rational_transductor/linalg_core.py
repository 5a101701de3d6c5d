"""Dense matrix kernels used throughout the package.

Matrices and vectors are plain ``numpy`` arrays (float64 unless the caller
passes float32).  Most functions accept leading batch axes.
"""

from __future__ import annotations

import numpy as np

from .errors import ConvergenceError, NumericError, ShapeError, SingularMatrixError

PIVOT_TOL = 1e-12
MAX_POWER_ITERS = 10_000


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} produced non-finite values")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with shape validation (batched over leading axes)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out = np.matmul(a, b)
    _check_finite(out, "matmul")
    return out


def solve_small(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``a @ x = b`` by Gaussian elimination with partial pivoting.

    ``a`` has shape ``(..., n, n)`` with ``n <= 64``; ``b`` has shape
    ``(..., n, m)``.  Leading axes broadcast.  Raises
    :class:`SingularMatrixError` when a pivot falls below ``1e-12`` in
    magnitude.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ShapeError(f"solve_small needs a square matrix, got {a.shape}")
    n = a.shape[-1]
    if n > 64:
        raise ShapeError(f"solve_small supports n <= 64, got {n}")
    if b.ndim < 2 or b.shape[-2] != n:
        raise ShapeError(f"right-hand side rows {b.shape} do not match {a.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise SingularMatrixError("solve_small received non-finite input")

    batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    dtype = np.result_type(a, b, np.float32)
    m = b.shape[-1]
    aug = np.concatenate(
        [np.broadcast_to(a, batch + (n, n)), np.broadcast_to(b, batch + (n, m))], axis=-1
    ).astype(dtype, copy=True)
    aug = aug.reshape((-1, n, n + m))
    rows = np.arange(aug.shape[0])

    for k in range(n):
        piv = k + np.argmax(np.abs(aug[:, k:, k]), axis=1)
        pivval = aug[rows, piv, k]
        if np.any(np.abs(pivval) < PIVOT_TOL):
            raise SingularMatrixError(f"pivot magnitude below {PIVOT_TOL} in column {k}")
        swap = piv != k
        if np.any(swap):
            idx = rows[swap]
            top = aug[idx, k, :].copy()
            aug[idx, k, :] = aug[idx, piv[swap], :]
            aug[idx, piv[swap], :] = top
        if k + 1 < n:
            factors = aug[:, k + 1 :, k] / aug[:, k, k][:, None]
            aug[:, k + 1 :, k:] -= factors[:, :, None] * aug[:, k, None, k:]

    x = np.empty((aug.shape[0], n, m), dtype=dtype)
    for k in range(n - 1, -1, -1):
        acc = aug[:, k, n:]
        if k + 1 < n:
            acc = acc - np.einsum("bj,bjm->bm", aug[:, k, k + 1 : n], x[:, k + 1 :, :])
        x[:, k, :] = acc / aug[:, k, k][:, None]
    return x.reshape(batch + (n, m))


def spectral_norm(a: np.ndarray, tol: float = 1e-12) -> float:
    """Largest singular value by power iteration on ``a.T @ a``.

    Starts from the normalised all-ones vector.  Stops once the eigen-residual
    ``||B v - lam v||`` drops below ``tol * lam``, which bounds the relative
    error of the returned value by ``tol``.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ShapeError(f"spectral_norm needs a nonempty matrix, got {a.shape}")
    _check_finite(a, "spectral_norm input")
    if tol <= 0:
        raise ValueError("tol must be positive")
    gram = a.T @ a
    if not np.any(gram):
        return 0.0
    n = gram.shape[0]
    v = np.full(n, 1.0 / np.sqrt(n))
    w = gram @ v
    if not np.any(np.abs(w) > 0):
        # All-ones start lies in the null space; restart from the heaviest column.
        j = int(np.argmax(np.linalg.norm(gram, axis=0)))
        v = np.zeros(n)
        v[j] = 1.0
        w = gram @ v
    for _ in range(MAX_POWER_ITERS):
        lam = float(v @ w)
        resid = float(np.linalg.norm(w - lam * v))
        if resid <= tol * lam:
            return float(np.sqrt(lam))
        v = w / np.linalg.norm(w)
        w = gram @ v
    raise ConvergenceError(f"power iteration did not converge in {MAX_POWER_ITERS} steps")


def singular_values(a: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(a, dtype=np.float64), compute_uv=False)


def numeric_rank(a: np.ndarray, tol: float = 1e-8) -> int:
    """Number of singular values above ``tol`` times the largest one."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ShapeError(f"numeric_rank needs a nonempty matrix, got {a.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    s = singular_values(a)
    if s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))
