"""Synthetic sequence tasks with brute-force label oracles.

Encodings:

* mod_count / parity: bits ``{0, 1}``; target at ``t`` is the running count of
  ones mod ``k``.
* addition: token ``10 a_t + b_t`` for the digit pair at significance ``t``,
  least-significant digit first; target is the sum digit.
* base2: bits, most-significant first; scalar target ``sum_t x_t 2^-t``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError

MAX_BASE2_LEN = 64


@dataclass
class TaskBatch:
    kind: str
    tokens: np.ndarray  # (n, T) int64
    targets: np.ndarray  # (n, T) int64 per-position labels, or (n,) float64 for base2
    lengths: np.ndarray  # (n,)
    k: int | None = None

    @property
    def vocab_size(self) -> int:
        return 100 if self.kind == "addition" else 2

    @property
    def n_classes(self) -> int | None:
        if self.kind == "mod_count":
            return self.k
        if self.kind == "parity":
            return 2
        if self.kind == "addition":
            return 10
        return None


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def mod_count_targets(bits: np.ndarray, k: int) -> np.ndarray:
    return np.cumsum(bits, axis=-1) % k


def gen_mod_count(k: int, length: int, n: int, seed=0) -> TaskBatch:
    if k < 2:
        raise InputError(f"k must be >= 2, got {k}")
    if length < 1 or n < 1:
        raise InputError("length and n must be positive")
    bits = _rng(seed).integers(0, 2, (n, length))
    return TaskBatch("mod_count", bits, mod_count_targets(bits, k), np.full(n, length), k)


def gen_parity(length: int, n: int, seed=0) -> TaskBatch:
    b = gen_mod_count(2, length, n, seed)
    b.kind = "parity"
    return b


def addition_targets(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Sum digits of LSD-first digit arrays (the final carry-out is dropped)."""
    out = np.empty_like(a)
    carry = np.zeros(a.shape[:-1], dtype=a.dtype)
    for t in range(a.shape[-1]):
        s = a[..., t] + b[..., t] + carry
        out[..., t] = s % 10
        carry = s // 10
    return out


def gen_addition(min_len: int, max_len: int, n: int, seed=0) -> TaskBatch:
    """One length ``L ~ U[min_len, max_len]`` for the whole batch (sequences stay rectangular)."""
    if not 1 <= min_len <= max_len:
        raise InputError("need 1 <= min_len <= max_len")
    rng = _rng(seed)
    L = int(rng.integers(min_len, max_len + 1))
    a = rng.integers(0, 10, (n, L))
    b = rng.integers(0, 10, (n, L))
    return TaskBatch("addition", 10 * a + b, addition_targets(a, b), np.full(n, L))


def decode_addition(tokens: np.ndarray) -> tuple[int, int]:
    """Integers encoded by one LSD-first pair-token sequence."""
    a = int("".join(str(d) for d in (tokens // 10)[::-1]) or "0")
    b = int("".join(str(d) for d in (tokens % 10)[::-1]) or "0")
    return a, b


def base2_targets(bits: np.ndarray) -> np.ndarray:
    L = bits.shape[-1]
    return bits @ (0.5 ** np.arange(1, L + 1))


def gen_base2(length: int, n: int, seed=0) -> TaskBatch:
    if not 1 <= length <= MAX_BASE2_LEN:
        raise InputError(f"base2 length must lie in [1, {MAX_BASE2_LEN}] (float64 mantissa)")
    bits = _rng(seed).integers(0, 2, (n, length))
    return TaskBatch("base2", bits, base2_targets(bits), np.full(n, length))


def generate(kind: str, length: int, n: int, seed=0, k: int = 5, min_len: int | None = None) -> TaskBatch:
    """Dispatch by task kind; ``min_len`` only applies to addition."""
    if kind == "mod_count":
        return gen_mod_count(k, length, n, seed)
    if kind == "parity":
        return gen_parity(length, n, seed)
    if kind == "addition":
        return gen_addition(length if min_len is None else min_len, length, n, seed)
    if kind == "base2":
        return gen_base2(length, n, seed)
    raise InputError(f"unknown task kind {kind!r}")


def dump_lines(batch: TaskBatch, path) -> None:
    """One JSON object per line: ``{"tokens": [...], "targets": ...}``."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        for toks, tgt in zip(batch.tokens, batch.targets):
            fh.write(json.dumps({"tokens": toks.tolist(), "targets": np.asarray(tgt).tolist()}) + "\n")
    tmp.replace(path)
