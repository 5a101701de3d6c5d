"""Differentiable transition generators and the rational feature head.

Each :class:`TransitionHead` maps every symbol of a finite alphabet to a
``d x d`` transition matrix (plus a bias vector for the affine kind).  The
per-symbol table is built on an autodiff tape, so parameter gradients come
from the tape; the recurrence over positions is handled by the scans in
:mod:`rational_transductor.scan`, whose adjoint re-enters the tape as the
gradient of the table.

Kinds:

``scaled_cayley``  ``M = g * (I + A)(I - A)^-1`` with ``A = W - W^T``; ``g = 1``
                   under conservation, else ``sigmoid(theta)``.
``stochastic``     column-wise softmax of a logit matrix (columns sum to 1).
``dplr``           ``D + U V^T``, rescaled so that ``||M||_2 <= gamma``.
``affine``         ``h <- A h + b``, scanned in homogeneous coordinates.
``shared_basis``   ``M_s = sum_k a[s, k] B_k``.
``mixture``        block-diagonal direct sum of sub-heads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import GradStore, Tape, backward, register_op
from .errors import InputError, ShapeError
from .linalg_core import spectral_norm
from .scan import scan_backward, scan_forward

KINDS = ("scaled_cayley", "stochastic", "dplr", "affine", "shared_basis", "mixture")
GAIN_LOGIT_INIT = 4.0
STOCHASTIC_BIAS = 4.0


@dataclass
class TransitionHead:
    kind: str
    dim: int
    alphabet_size: int
    params: dict = field(default_factory=dict)
    conserve: bool = True  # scaled_cayley
    rank: int = 1  # dplr
    gamma: float = 1.0  # dplr spectral bound
    n_basis: int = 2  # shared_basis
    subheads: list = field(default_factory=list)  # mixture

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown head kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "mixture":
            if not self.subheads:
                raise InputError("mixture head needs at least one sub-head")
            for sub in self.subheads:
                if sub.kind in ("affine", "mixture"):
                    raise InputError(f"mixture cannot contain a {sub.kind} head")
                if sub.alphabet_size != self.alphabet_size:
                    raise InputError("sub-head alphabet sizes must match")
            self.dim = sum(s.dim for s in self.subheads)
        if self.kind == "dplr" and not 0 < self.gamma <= 1:
            raise InputError("gamma must lie in (0, 1]")

    @property
    def is_affine(self) -> bool:
        return self.kind == "affine"

    @property
    def alpha(self) -> np.ndarray:
        """Fixed initial state: ``e_0`` (zero for the affine kind)."""
        if self.kind == "mixture":
            return np.concatenate([s.alpha for s in self.subheads])
        a = np.zeros(self.dim)
        if not self.is_affine:
            a[0] = 1.0
        return a

    def named_params(self, prefix: str = "") -> dict:
        """Flat name -> array mapping (arrays are the live parameter storage)."""
        if self.kind == "mixture":
            out = {}
            for i, sub in enumerate(self.subheads):
                out.update(sub.named_params(f"{prefix}sub{i}."))
            return out
        return {prefix + k: v for k, v in self.params.items()}

    def astype(self, dtype) -> "TransitionHead":
        for sub in self.subheads:
            sub.astype(dtype)
        for k, v in self.params.items():
            self.params[k] = v.astype(dtype)
        return self

    def config(self) -> dict:
        cfg = {"kind": self.kind, "dim": self.dim, "alphabet_size": self.alphabet_size}
        if self.kind == "scaled_cayley":
            cfg["conserve"] = self.conserve
        elif self.kind == "dplr":
            cfg.update(rank=self.rank, gamma=self.gamma)
        elif self.kind == "shared_basis":
            cfg["n_basis"] = self.n_basis
        elif self.kind == "mixture":
            cfg["subheads"] = [s.config() for s in self.subheads]
        return cfg


def make_head(kind: str, dim: int, alphabet_size: int, **options) -> TransitionHead:
    """Create a head; call :func:`init_near_identity` to populate parameters."""
    if kind == "mixture":
        subs = [s if isinstance(s, TransitionHead) else head_from_config(s) for s in options.pop("subheads")]
        return TransitionHead("mixture", sum(s.dim for s in subs), alphabet_size, subheads=subs, **options)
    return TransitionHead(kind, dim, alphabet_size, **options)


def head_from_config(cfg: dict) -> TransitionHead:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    dim = cfg.pop("dim", 0)
    alphabet_size = cfg.pop("alphabet_size")
    if kind == "mixture":
        cfg["subheads"] = [dict(s, alphabet_size=alphabet_size) for s in cfg["subheads"]]
    return make_head(kind, dim, alphabet_size, **cfg)


def spectral_project(w: np.ndarray, gamma: float) -> np.ndarray:
    """``w / max(1, ||w||_2 / gamma)``; returns ``w`` itself when already within bound."""
    if not 0 < gamma <= 1:
        raise InputError("gamma must lie in (0, 1]")
    norm = spectral_norm(w)
    if norm <= gamma:
        return w
    return w / (norm / gamma)


def init_near_identity(head: TransitionHead, eps: float = 0.01, nu: float = 1e-4, seed=0) -> TransitionHead:
    """Initialise every transition close to the identity."""
    if not (0 <= eps <= 0.1 and 0 <= nu <= 0.1):
        raise InputError("eps and nu must lie in [0, 0.1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    V, d = head.alphabet_size, head.dim
    eye = np.eye(d)
    if head.kind == "mixture":
        for sub in head.subheads:
            init_near_identity(sub, eps, nu, rng)
        return head
    if head.kind == "scaled_cayley":
        head.params = {"W": nu * rng.standard_normal((V, d, d))}
        if not head.conserve:
            head.params["theta"] = np.full(V, GAIN_LOGIT_INIT)
    elif head.kind == "stochastic":
        head.params = {"logits": STOCHASTIC_BIAS * eye + nu * rng.standard_normal((V, d, d))}
    elif head.kind == "dplr":
        head.params = {
            "D": rng.uniform(1 - eps, 1, (V, d)),
            "U": nu * rng.standard_normal((V, d, head.rank)),
            "V": nu * rng.standard_normal((V, d, head.rank)),
        }
    elif head.kind == "affine":
        head.params = {"A": eye + nu * rng.standard_normal((V, d, d)), "b": np.zeros((V, d))}
    elif head.kind == "shared_basis":
        basis = nu * rng.standard_normal((head.n_basis, d, d))
        basis[0] = eye
        coef = nu * rng.standard_normal((V, head.n_basis))
        coef[:, 0] = 1.0
        head.params = {"B": basis, "coef": coef}
    return head


# ------------------------------------------------------------ transitions


def _dplr_raw(D, U, Vf):
    return D[..., None, :] * np.eye(D.shape[-1], dtype=D.dtype) + U @ np.swapaxes(Vf, -1, -2)


def _norms2(mats: np.ndarray) -> np.ndarray:
    # SVD rather than power iteration: near-identity transitions have almost
    # equal leading singular values, where power iteration stalls.
    return np.linalg.norm(np.asarray(mats, dtype=np.float64), ord=2, axis=(-2, -1))


def _dplr_factors(raw: np.ndarray, gamma: float) -> np.ndarray:
    return 1.0 / np.maximum(1.0, _norms2(raw) / gamma)


def symbol_table(head: TransitionHead, tape: Tape, prefix: str = "head.") -> tuple[int, int | None]:
    """Put the head parameters on ``tape`` and build the per-symbol table.

    Returns node ids ``(M, b)``: ``M`` has value ``(alphabet, d, d)``; ``b``
    is the ``(alphabet, d)`` bias table for the affine kind, else ``None``.
    Matrices are computed once per symbol and shared by every position.
    """
    V, d = head.alphabet_size, head.dim
    nodes = {k: tape.param(prefix + k, v) for k, v in head.params.items()}
    kind = head.kind
    dtype = next(iter(head.params.values())).dtype if head.params else np.float64
    eye = np.eye(d, dtype=dtype)

    if kind == "scaled_cayley":
        W = nodes["W"]
        A = tape.sub(W, tape.transpose(W))
        I = tape.const(eye)
        Q = tape.solve(tape.sub(I, A), tape.add(I, A))
        if head.conserve:
            return Q, None
        g = tape.reshape(tape.sigmoid(nodes["theta"]), (V, 1, 1))
        return tape.mul(Q, g), None
    if kind == "stochastic":
        return tape.softmax(nodes["logits"], axis=-2), None
    if kind == "dplr":
        D, U, Vf = nodes["D"], nodes["U"], nodes["V"]
        diag = tape.mul(tape.reshape(D, (V, 1, d)), tape.const(eye))
        raw = tape.add(diag, tape.matmul(U, tape.transpose(Vf)))
        # Normalisation factor is treated as a constant (no gradient through ||M||_2).
        factors = _dplr_factors(tape.value(raw), head.gamma).astype(dtype)
        return tape.mul(raw, tape.const(factors.reshape(V, 1, 1))), None
    if kind == "affine":
        return nodes["A"], nodes["b"]
    if kind == "shared_basis":
        K = head.n_basis
        flat = tape.matmul(nodes["coef"], tape.reshape(nodes["B"], (K, d * d)))
        return tape.reshape(flat, (V, d, d)), None
    # mixture: assemble block rows [0 .. M_i .. 0] and stack them.
    blocks = []
    offset = 0
    for i, sub in enumerate(head.subheads):
        m, _ = symbol_table(sub, tape, f"{prefix}sub{i}.")
        parts = []
        if offset:
            parts.append(tape.const(np.zeros((V, sub.dim, offset), dtype=dtype)))
        parts.append(m)
        rest = d - offset - sub.dim
        if rest:
            parts.append(tape.const(np.zeros((V, sub.dim, rest), dtype=dtype)))
        blocks.append(tape.concat(parts, axis=-1) if len(parts) > 1 else m)
        offset += sub.dim
    return (tape.concat(blocks, axis=-2) if len(blocks) > 1 else blocks[0]), None


def transition_table(head: TransitionHead) -> tuple[np.ndarray, np.ndarray | None]:
    tape = Tape()
    m, b = symbol_table(head, tape)
    return tape.value(m), (None if b is None else tape.value(b))


def operator_sequence(head: TransitionHead, tokens) -> tuple[np.ndarray, np.ndarray | None]:
    """Per-position operators ``(..., T, d, d)`` (and biases) for ``tokens``."""
    tokens = _check_tokens(head, tokens)
    m, b = transition_table(head)
    return m[tokens], (None if b is None else b[tokens])


def _check_tokens(head: TransitionHead, tokens) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= head.alphabet_size):
        raise InputError(f"token outside alphabet of size {head.alphabet_size}")
    return tokens


def lift(ops: np.ndarray, biases: np.ndarray) -> np.ndarray:
    """``[[M, b], [0, 1]]`` homogeneous form of an affine map."""
    d = ops.shape[-1]
    out = np.zeros(ops.shape[:-2] + (d + 1, d + 1), dtype=ops.dtype)
    out[..., :d, :d] = ops
    out[..., :d, d] = biases
    out[..., d, d] = 1
    return out


# -------------------------------------------------------- forward/backward


def head_forward(head: TransitionHead, tokens, alpha=None, schedule: str = "auto") -> np.ndarray:
    """States ``h_0 .. h_T``, shape ``(..., T+1, d)``."""
    ops, biases = operator_sequence(head, tokens)
    alpha = head.alpha.astype(ops.dtype) if alpha is None else np.asarray(alpha)
    return scan_forward(ops, alpha, biases, schedule=schedule)


def build_transitions(head: TransitionHead, tokens, tape: Tape, prefix: str = "head.") -> tuple[int, int | None]:
    """Per-position operators on the tape: nodes of shape ``(..., T, d, d)`` (and ``(..., T, d)`` biases).

    The per-symbol matrices are computed once and gathered by token, so the
    gradient on every position flows back into the symbol table.
    """
    tokens = _check_tokens(head, tokens)
    m, b = symbol_table(head, tape, prefix)
    ops = tape.embedding(m, tokens)
    return ops, (None if b is None else tape.embedding(b, tokens))


def adjoint_grads(ops, biases, states, upstream, schedule="auto"):
    """Per-position gradients of the operators (and biases).

    ``upstream[..., t-1, :]`` is the direct gradient on ``h_t`` (t = 1..T).
    The adjoints come from :func:`scan_backward`; the gradient of ``M_t`` is
    ``delta_t h_{t-1}^T``.
    """
    T = ops.shape[-3]
    d = ops.shape[-1]
    if upstream.shape[-2:] != (T, d):
        raise ShapeError(f"upstream shape {upstream.shape} does not match (T={T}, d={d})")
    if biases is not None:
        ops = lift(ops, biases)
        ones = np.ones(states.shape[:-1] + (1,), dtype=states.dtype)
        states = np.concatenate([states, ones], axis=-1)
        upstream = np.concatenate([upstream, np.zeros(upstream.shape[:-1] + (1,), dtype=upstream.dtype)], axis=-1)
    if T == 0:
        g = np.zeros(ops.shape, dtype=ops.dtype)
    else:
        inj = np.zeros_like(upstream)
        inj[..., 1:, :] = upstream[..., :-1, :]
        deltas = scan_backward(ops, inj, upstream[..., -1, :], schedule=schedule)
        g = deltas[..., 1:, :, None] * states[..., :-1, None, :]
    if biases is None:
        return g, None
    return g[..., :d, :d], g[..., :d, d]


def head_backward(head: TransitionHead, tokens, states, upstream, schedule: str = "auto") -> GradStore:
    """Parameter gradients given direct gradients ``upstream`` on ``h_1 .. h_T``."""
    tokens = _check_tokens(head, tokens)
    upstream = np.asarray(upstream)
    if upstream.shape[:-1] != tokens.shape:
        raise ShapeError(f"upstream {upstream.shape} does not match tokens {tokens.shape}")
    tape = Tape()
    ops_node, b_node = build_transitions(head, tokens, tape, prefix="")
    biases = None if b_node is None else tape.value(b_node)
    gm, gb = adjoint_grads(tape.value(ops_node), biases, np.asarray(states), upstream, schedule)
    seeds = {ops_node: gm}
    if b_node is not None:
        seeds[b_node] = gb
    return backward(tape, seeds=seeds)


# The scan as a tape op: inputs (ops[, biases]) per position, output h_1..h_T.


def _rscan_fwd(ops, biases=None, *, alpha, schedule="auto"):
    states = scan_forward(ops, alpha.astype(ops.dtype), biases, schedule=schedule)
    return states[..., 1:, :], states


def _rscan_vjp(g, vals, out, states, *, alpha, schedule="auto"):
    gm, gb = adjoint_grads(vals[0], vals[1] if len(vals) > 1 else None, states, g, schedule)
    return (gm,) if gb is None else (gm, gb)


register_op("rational_scan", _rscan_fwd, _rscan_vjp)


def record_head(head: TransitionHead, tape: Tape, tokens, prefix: str = "head.", schedule: str = "auto") -> int:
    """Record transitions and the scan; returns the node holding ``h_1 .. h_T``."""
    ops, b = build_transitions(head, tokens, tape, prefix)
    inputs = (ops,) if b is None else (ops, b)
    return tape.record("rational_scan", *inputs, alpha=head.alpha, schedule=schedule)


# ----------------------------------------------------------------- audits


def audit(head: TransitionHead, tol: float = 1e-10) -> dict:
    """Structural invariants recomputed in float64: name -> (passed, measured)."""
    h64 = TransitionHead(
        head.kind, head.dim, head.alphabet_size,
        {k: np.asarray(v, dtype=np.float64) for k, v in head.params.items()},
        head.conserve, head.rank, head.gamma, head.n_basis,
        [TransitionHead(s.kind, s.dim, s.alphabet_size, {k: np.asarray(v, np.float64) for k, v in s.params.items()},
                        s.conserve, s.rank, s.gamma, s.n_basis) for s in head.subheads],
    )
    results = {}
    _audit_into(h64, results, "", tol)
    return results


def _audit_into(head, results, prefix, tol):
    if head.kind == "mixture":
        m, _ = transition_table(head)
        off = 0
        mask = np.ones(m.shape[1:], dtype=bool)
        for i, sub in enumerate(head.subheads):
            mask[off : off + sub.dim, off : off + sub.dim] = False
            _audit_into(sub, results, f"{prefix}sub{i}.", tol)
            off += sub.dim
        leak = float(np.max(np.abs(m[:, mask]))) if mask.any() else 0.0
        results[prefix + "block_diagonal"] = (leak == 0.0, leak)
        return
    m, _ = transition_table(head)
    eye = np.eye(head.dim)
    if head.kind == "scaled_cayley":
        gains = np.ones(head.alphabet_size) if head.conserve else 1 / (1 + np.exp(-head.params["theta"]))
        q = m / gains[:, None, None]
        err = float(np.max(np.abs(np.swapaxes(q, -1, -2) @ q - eye)))
        results[prefix + "orthogonal"] = (err <= tol, err)
        if not head.conserve:
            ok = bool(np.all((gains > 0) & (gains < 1)))
            results[prefix + "gain_in_unit_interval"] = (ok, float(np.max(gains)))
    elif head.kind == "stochastic":
        colerr = float(np.max(np.abs(m.sum(axis=-2) - 1)))
        neg = float(np.min(m))
        results[prefix + "column_stochastic"] = (colerr <= 1e-12 and neg >= 0, colerr)
    elif head.kind == "dplr":
        worst = float(np.max(_norms2(m)))
        results[prefix + "spectral_bound"] = (worst <= head.gamma + 1e-8, worst)


def reproject(head: TransitionHead) -> None:
    """Rescale DPLR factors in place so the raw transitions satisfy the bound."""
    if head.kind == "mixture":
        for sub in head.subheads:
            reproject(sub)
        return
    if head.kind != "dplr":
        return
    p = head.params
    raw = _dplr_raw(p["D"].astype(np.float64), p["U"].astype(np.float64), p["V"].astype(np.float64))
    c = _dplr_factors(raw, head.gamma)
    if np.all(c == 1.0):
        return
    p["D"] *= c[:, None].astype(p["D"].dtype)
    root = np.sqrt(c)[:, None, None].astype(p["U"].dtype)
    p["U"] *= root
    p["V"] *= root
