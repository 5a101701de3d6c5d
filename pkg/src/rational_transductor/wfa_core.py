"""Weighted finite automata as linear representations.

A :class:`Wfa` holds an initial vector ``alpha`` and one ``dim x dim``
transition matrix per symbol; reading ``x_1 .. x_T`` produces the states
``h_t = M[x_t] @ h_{t-1}`` with ``h_0 = alpha``.  No final-weight vector is
stored: callers that need a scalar series (the Hankel check) supply one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ResourceError
from .linalg_core import numeric_rank

MAX_HANKEL_ENTRIES = 10**7


@dataclass(frozen=True)
class Wfa:
    alpha: np.ndarray  # (dim,)
    transitions: np.ndarray  # (alphabet_size, dim, dim)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        trans = np.asarray(self.transitions, dtype=np.float64)
        if trans.ndim != 3 or trans.shape[1] != trans.shape[2]:
            raise InputError(f"transitions must be (n_symbols, d, d), got {trans.shape}")
        if alpha.shape != (trans.shape[1],):
            raise InputError(f"alpha shape {alpha.shape} does not match dim {trans.shape[1]}")
        alpha.setflags(write=False)
        trans.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "transitions", trans)

    @property
    def alphabet_size(self) -> int:
        return self.transitions.shape[0]

    @property
    def dim(self) -> int:
        return self.transitions.shape[1]

    def word_matrix(self, tokens) -> np.ndarray:
        """``M_x = M[x_T] ... M[x_1]``."""
        out = np.eye(self.dim)
        for s in self._check(tokens):
            out = self.transitions[s] @ out
        return out

    def _check(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.alphabet_size):
            raise InputError(f"token outside alphabet of size {self.alphabet_size}")
        return tokens


def eval_sequential(wfa: Wfa, tokens) -> np.ndarray:
    """States ``h_0 .. h_T`` by a left-to-right loop; shape ``(..., T+1, dim)``.

    ``tokens`` may be a single sequence ``(T,)`` or a batch ``(B, T)``.  This
    is the reference the parallel scans are checked against.
    """
    tokens = wfa._check(tokens)
    batch = tokens.shape[:-1]
    T = tokens.shape[-1]
    states = np.empty(batch + (T + 1, wfa.dim))
    h = np.broadcast_to(wfa.alpha, batch + (wfa.dim,)).copy()
    states[..., 0, :] = h
    for t in range(T):
        m = wfa.transitions[tokens[..., t]]
        h = np.einsum("...ij,...j->...i", m, h)
        states[..., t + 1, :] = h
    return states


def final_state(wfa: Wfa, tokens) -> np.ndarray:
    return eval_sequential(wfa, tokens)[..., -1, :]


def make_parity() -> Wfa:
    flip = np.array([[0.0, 1.0], [1.0, 0.0]])
    return Wfa(np.array([1.0, 0.0]), np.stack([np.eye(2), flip]))


def make_mod_counter(k: int) -> Wfa:
    """States ``e_r`` with ``r = (#1s mod k)``; symbol 1 shifts ``e_j -> e_{j+1}``."""
    if k < 2:
        raise InputError(f"mod counter needs k >= 2, got {k}")
    shift = np.roll(np.eye(k), 1, axis=0)
    alpha = np.zeros(k)
    alpha[0] = 1.0
    return Wfa(alpha, np.stack([np.eye(k), shift]))


def make_horner(base: int) -> Wfa:
    """State ``(v, 1)`` with ``v <- base * v + digit``."""
    if base < 2:
        raise InputError(f"base must be >= 2, got {base}")
    mats = np.array([[[base, s], [0.0, 1.0]] for s in range(base)], dtype=np.float64)
    return Wfa(np.array([0.0, 1.0]), mats)


def horner_value(wfa: Wfa, tokens) -> float:
    return float(final_state(wfa, tokens)[0])


def rotation(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def make_rope(freqs, alphabet_size: int = 2) -> Wfa:
    """Input-independent block rotations; block i of ``h_t`` is ``(cos t*th_i, sin t*th_i)``."""
    freqs = np.atleast_1d(np.asarray(freqs, dtype=np.float64))
    if freqs.size == 0:
        raise InputError("make_rope needs at least one frequency")
    d = 2 * freqs.size
    r = np.zeros((d, d))
    for i, th in enumerate(freqs):
        r[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = rotation(th)
    alpha = np.tile([1.0, 0.0], freqs.size)
    return Wfa(alpha, np.broadcast_to(r, (alphabet_size, d, d)))


def direct_sum(a: Wfa, b: Wfa) -> Wfa:
    if a.alphabet_size != b.alphabet_size:
        raise InputError(f"alphabet sizes differ: {a.alphabet_size} vs {b.alphabet_size}")
    d = a.dim + b.dim
    mats = np.zeros((a.alphabet_size, d, d))
    mats[:, : a.dim, : a.dim] = a.transitions
    mats[:, a.dim :, a.dim :] = b.transitions
    return Wfa(np.concatenate([a.alpha, b.alpha]), mats)


def default_readout(dim: int) -> np.ndarray:
    """Deterministic readout ``beta_i = 1 + i/dim`` used for Hankel blocks.

    All-ones is a degenerate choice for conservative automata (permutation or
    stochastic transitions keep ``1 . h`` constant), so distinct weights are used.
    """
    return 1.0 + np.arange(dim) / dim


def enumerate_words(alphabet_size: int, max_len: int, min_len: int = 0):
    """Words ordered by length, then lexicographically."""
    for n in range(min_len, max_len + 1):
        yield from itertools.product(range(alphabet_size), repeat=n)


def hankel_block(wfa: Wfa, max_len: int, beta=None) -> np.ndarray:
    """``H[u, v] = beta . M_{uv} alpha`` over all prefixes/suffixes up to ``max_len``."""
    n_words = sum(wfa.alphabet_size**n for n in range(max_len + 1))
    if n_words * n_words > MAX_HANKEL_ENTRIES:
        raise ResourceError(f"Hankel block of {n_words}^2 entries exceeds {MAX_HANKEL_ENTRIES}")
    beta = default_readout(wfa.dim) if beta is None else np.asarray(beta, dtype=np.float64)
    words = list(enumerate_words(wfa.alphabet_size, max_len))
    # S(uv) = (beta^T M_v) (M_u alpha): one forward and one backward vector per word.
    fwd = np.stack([wfa.word_matrix(u) @ wfa.alpha for u in words])
    bwd = np.stack([beta @ wfa.word_matrix(v) for v in words])
    return fwd @ bwd.T


def hankel_rank(wfa: Wfa, max_len: int, tol: float = 1e-8, beta=None) -> int:
    return numeric_rank(hankel_block(wfa, max_len, beta), tol)
