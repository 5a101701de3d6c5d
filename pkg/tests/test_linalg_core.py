import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rational_transductor.errors import NumericError, ShapeError, SingularMatrixError
from rational_transductor.linalg_core import matmul, numeric_rank, singular_values, solve_small, spectral_norm
from rational_transductor.wfa_core import hankel_block, make_parity


def naive_matmul(a, b):
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            for k in range(a.shape[1]):
                out[i, j] += a[i, k] * b[k, j]
    return out


def test_matmul_examples(rng):
    a = rng.standard_normal((2, 2))
    assert np.array_equal(matmul(np.eye(2), a), a)
    assert np.array_equal(matmul(np.array([[1.0, 2], [3, 4]]), np.array([[0.0, 1], [1, 0]])), [[2, 1], [4, 3]])
    a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    assert np.max(np.abs(matmul(a, b) - naive_matmul(a, b))) <= 1e-12


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_solve_examples(rng):
    b = rng.standard_normal((3, 2))
    assert np.allclose(solve_small(np.eye(3), b), b, atol=0)
    assert np.allclose(solve_small(2 * np.eye(4), np.eye(4)), 0.5 * np.eye(4), atol=0)
    a = rng.standard_normal((8, 8)) + 8 * np.eye(8)
    b = rng.standard_normal((8, 8))
    assert np.max(np.abs(a @ solve_small(a, b) - b)) <= 1e-10


def test_solve_singular():
    with pytest.raises(SingularMatrixError):
        solve_small(np.zeros((3, 3)), np.eye(3))


def test_spectral_norm_examples(rng):
    assert spectral_norm(np.eye(4)) == pytest.approx(1.0, abs=1e-12)
    assert spectral_norm(np.diag([0.5, 0.2])) == pytest.approx(0.5, abs=1e-12)
    a = rng.standard_normal((8, 8))
    assert abs(spectral_norm(a) - np.linalg.svd(a, compute_uv=False)[0]) <= 1e-8


def test_rank_examples(rng):
    assert numeric_rank(np.zeros((4, 4))) == 0
    u, v = rng.standard_normal(5), rng.standard_normal(4)
    assert numeric_rank(np.outer(u, v)) == 1
    assert numeric_rank(hankel_block(make_parity(), 4)) == 2


def test_non_finite_rejected():
    with pytest.raises(NumericError):
        spectral_norm(np.array([[np.nan]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 10_000))
def test_singular_values_match_numpy(n, seed):
    a = np.random.default_rng(seed).standard_normal((n, n))
    assert np.allclose(singular_values(a), np.linalg.svd(a, compute_uv=False), atol=1e-10)
