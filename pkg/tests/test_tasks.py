import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rational_transductor.errors import InputError
from rational_transductor.tasks import (addition_targets, base2_targets, decode_addition, dump_lines, gen_addition,
                                        gen_base2, gen_mod_count, generate, mod_count_targets)


def test_mod_count_examples():
    assert mod_count_targets(np.array([1, 1, 0, 1, 1]), 5).tolist() == [1, 2, 2, 3, 4]
    assert np.all(mod_count_targets(np.zeros(20, dtype=int), 5) == 0)
    b = gen_mod_count(5, 200, 200, seed=0)
    const_acc = max(np.mean(b.targets == c) for c in range(5))
    assert abs(const_acc - 0.2) < 0.03


def test_addition_examples():
    a = np.array([9, 9, 9])
    b = np.array([1, 0, 0])
    assert addition_targets(a, b).tolist() == [0, 0, 0]
    assert addition_targets(np.zeros(4, int), np.zeros(4, int)).tolist() == [0, 0, 0, 0]


def test_addition_batches(rng):
    batch = gen_addition(10, 40, 16, rng)
    L = batch.tokens.shape[1]
    assert 10 <= L <= 40 and batch.vocab_size == 100
    for toks, tgt in zip(batch.tokens, batch.targets):
        x, y = decode_addition(toks)
        s = (x + y) % 10**L
        assert int("".join(map(str, tgt[::-1]))) == s


def test_base2_examples():
    assert base2_targets(np.array([1, 0, 1])) == 0.625
    assert base2_targets(np.zeros(64, dtype=int)) == 0.0
    t = gen_base2(64, 20000, seed=1).targets
    assert abs(np.var(t) - 1 / 12) < 3e-3
    with pytest.raises(InputError):
        gen_base2(65, 2)


def test_generate_dispatch():
    assert generate("parity", 8, 3).n_classes == 2
    assert generate("mod_count", 8, 3, k=7).n_classes == 7
    with pytest.raises(InputError):
        generate("nope", 8, 3)


def test_seed_determinism():
    a, b = gen_mod_count(5, 30, 4, seed=9), gen_mod_count(5, 30, 4, seed=9)
    assert np.array_equal(a.tokens, b.tokens)


def test_dump_lines(tmp_path):
    batch = gen_mod_count(3, 5, 2, seed=0)
    p = tmp_path / "x.jsonl"
    dump_lines(batch, p)
    rows = [json.loads(line) for line in p.read_text().splitlines()]
    assert rows[1]["tokens"] == batch.tokens[1].tolist()


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**12), st.integers(0, 10**12))
def test_addition_property(x, y):
    L = 13
    a = np.array([int(c) for c in str(x).zfill(L)[::-1]])
    b = np.array([int(c) for c in str(y).zfill(L)[::-1]])
    out = addition_targets(a, b)
    assert int("".join(map(str, out[::-1]))) == (x + y) % 10**L
