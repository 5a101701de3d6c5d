import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rational_transductor.errors import InputError
from rational_transductor.wfa_core import (Wfa, direct_sum, eval_sequential, final_state, hankel_rank, horner_value,
                                           make_horner, make_mod_counter, make_parity, make_rope)


def bits(s):
    return [int(c) for c in s]


def test_eval_sequential_examples(rng):
    p = make_parity()
    assert np.array_equal(eval_sequential(p, []), [p.alpha])
    assert np.array_equal(final_state(p, bits("1101")), [0, 1])
    alpha = rng.standard_normal(3)
    w = Wfa(alpha, np.stack([np.eye(3)] * 2))
    assert np.array_equal(eval_sequential(w, [0, 1, 1, 0]), np.tile(alpha, (5, 1)))


def test_parity_examples(rng):
    p = make_parity()
    assert np.array_equal(final_state(p, []), [1, 0])
    assert np.array_equal(final_state(p, bits("101")), [1, 0])
    for _ in range(1000):
        x = rng.integers(0, 2, rng.integers(0, 30))
        assert np.argmax(final_state(p, x)) == x.sum() % 2


def test_mod_counter_examples(rng):
    assert np.array_equal(final_state(make_mod_counter(3), bits("111")), [1, 0, 0])
    assert np.array_equal(final_state(make_mod_counter(5), []), np.eye(5)[0])
    m = make_mod_counter(5)
    for _ in range(500):
        x = rng.integers(0, 2, rng.integers(0, 40))
        assert np.array_equal(final_state(m, x), np.eye(5)[x.sum() % 5])


def test_horner_examples(rng):
    assert horner_value(make_horner(2), bits("101")) == 5
    assert horner_value(make_horner(2), [0]) == 0
    h = make_horner(10)
    for _ in range(500):
        x = rng.integers(0, 10, rng.integers(1, 13))
        assert horner_value(h, x) == int("".join(map(str, x)))


def test_rope_examples():
    assert np.array_equal(final_state(make_rope([0.3, 1.1]), []), [1, 0, 1, 0])
    assert np.allclose(final_state(make_rope([np.pi / 2]), [0]), [0, 1], atol=1e-15)
    assert np.max(np.abs(final_state(make_rope([0.3]), [0] * 7) - [np.cos(2.1), np.sin(2.1)])) <= 1e-12


def test_direct_sum(rng):
    a, b = make_parity(), make_mod_counter(3)
    s = direct_sum(a, b)
    assert s.dim == 5
    x = rng.integers(0, 2, 17)
    assert np.array_equal(eval_sequential(s, x), np.hstack([eval_sequential(a, x), eval_sequential(b, x)]))
    assert np.all(s.transitions[:, :2, 2:] == 0) and np.all(s.transitions[:, 2:, :2] == 0)


def test_hankel_rank_examples():
    zero = Wfa(np.zeros(2), make_parity().transitions)
    assert hankel_rank(zero, 4) == 0
    assert hankel_rank(make_parity(), 4) == 2
    assert hankel_rank(make_mod_counter(5), 5) == 5


def test_invalid_token():
    with pytest.raises(InputError):
        eval_sequential(make_parity(), [0, 2])


def test_wfa_is_immutable():
    p = make_parity()
    with pytest.raises(ValueError):
        p.transitions[0, 0, 0] = 3.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 1), max_size=60), st.integers(2, 7))
def test_mod_counter_property(xs, k):
    assert np.argmax(final_state(make_mod_counter(k), xs)) == sum(xs) % k
