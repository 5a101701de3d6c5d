"""Pre-norm transformer with deep rational injection.

Layer ``l`` receives ``z + h W_proj^(l)^T`` where ``h_1 .. h_T`` is the state
trajectory of the rational head (the same trajectory at every layer), then
applies the parallel pre-norm block ``x + Attn(LN1 x) + FFN(LN2 x)``.
Without a head (or with every ``W_proj`` zero) the model is a plain
transformer.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tape
from .errors import InputError, NumericError, ShapeError
from .rational_head import TransitionHead, head_from_config, init_near_identity, record_head

POSITIONAL = ("learned_absolute", "none")
READOUTS = ("classify", "regress")


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 32
    num_layers: int = 2
    num_heads: int = 4
    d_rat: int = 0
    head: dict | None = None  # head config (kind and kind options); None for a baseline
    positional: str = "none"
    readout: str = "classify"
    n_classes: int = 2
    max_positions: int = 64
    ffn_mult: int = 4  # 0 drops the FFN branch
    init_eps: float = 0.01
    init_nu: float = 1e-4

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise InputError(f"d_model {self.d_model} not divisible by num_heads {self.num_heads}")
        if self.positional not in POSITIONAL:
            raise InputError(f"positional must be one of {POSITIONAL}")
        if self.readout not in READOUTS:
            raise InputError(f"readout must be one of {READOUTS}")
        if self.head is not None and self.d_rat < 1:
            raise InputError("a rational head needs d_rat >= 1")
        if self.ffn_mult < 0:
            raise InputError("ffn_mult must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Model:
    config: ModelConfig
    weights: dict = field(default_factory=dict)
    head: TransitionHead | None = None

    def named_params(self) -> dict:
        out = dict(self.weights)
        if self.head is not None:
            out.update(self.head.named_params("head."))
        return out

    def astype(self, dtype) -> "Model":
        self.weights = {k: v.astype(dtype) for k, v in self.weights.items()}
        if self.head is not None:
            self.head.astype(dtype)
        return self

    @property
    def dtype(self):
        return self.weights["tok_emb"].dtype


def init_model(config: ModelConfig, seed=0, dtype=np.float64) -> Model:
    rng = np.random.default_rng(seed)
    D, F = config.d_model, config.ffn_mult * config.d_model

    def dense(n_out, n_in):
        # (n_in, n_out) layout: activations multiply on the left.
        return rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)

    w = {"tok_emb": rng.standard_normal((config.vocab_size, D))}
    if config.positional == "learned_absolute":
        w["pos_emb"] = 0.1 * rng.standard_normal((config.max_positions, D))
    for l in range(config.num_layers):
        p = f"layer{l}."
        w.update({
            p + "ln1.g": np.ones(D), p + "ln1.b": np.zeros(D),
            p + "wq": dense(D, D), p + "wk": dense(D, D), p + "wv": dense(D, D),
            p + "wo": dense(D, D) / np.sqrt(2 * config.num_layers),
        })
        if F:
            w.update({
                p + "ln2.g": np.ones(D), p + "ln2.b": np.zeros(D),
                p + "w1": dense(F, D), p + "b1": np.zeros(F),
                p + "w2": dense(D, F) / np.sqrt(2 * config.num_layers), p + "b2": np.zeros(D),
            })
        if config.head is not None:
            # Stored as (d_model, d_rat) so that the injection is h @ W_proj^T.
            w[p + "w_proj"] = rng.standard_normal((D, config.d_rat)) / np.sqrt(config.d_rat)
    if config.readout == "classify":
        w["lnf.g"], w["lnf.b"] = np.ones(D), np.zeros(D)
        w["w_out"], w["b_out"] = dense(config.n_classes, D), np.zeros(config.n_classes)
    else:
        w["w_out"], w["b_out"] = dense(1, D), np.zeros(1)
    head = None
    if config.head is not None:
        hcfg = dict(config.head, dim=config.d_rat, alphabet_size=config.vocab_size)
        head = init_near_identity(head_from_config(hcfg), config.init_eps, config.init_nu, rng)
    return Model(config, w, head).astype(dtype)


def inject(z: np.ndarray, h: np.ndarray, w_proj: np.ndarray) -> np.ndarray:
    """``z_t + W_proj h_t``; ``h`` holds ``h_1 .. h_T`` aligned with the positions of ``z``."""
    if h.shape[:-1] != z.shape[:-1]:
        raise ShapeError(f"state trajectory {h.shape} does not align with hidden states {z.shape}")
    if w_proj.shape != (z.shape[-1], h.shape[-1]):
        raise ShapeError(f"w_proj shape {w_proj.shape} must be ({z.shape[-1]}, {h.shape[-1]})")
    return z + h @ w_proj.T


def causal_mask(T: int) -> np.ndarray:
    return np.tril(np.ones((T, T), dtype=bool))


def _layer_on_tape(tape: Tape, x: int, p: dict, num_heads: int, causal: bool) -> int:
    """One parallel pre-norm block on ``tape``; ``p`` maps weight names to node ids."""
    B, T, D = tape.value(x).shape
    dh = D // num_heads
    a = tape.layernorm(x, p["ln1.g"], p["ln1.b"])

    def heads(w):
        return tape.transpose(tape.reshape(tape.matmul(a, w), (B, T, num_heads, dh)), (0, 2, 1, 3))

    q, k, v = heads(p["wq"]), heads(p["wk"]), heads(p["wv"])
    scores = tape.scale(tape.matmul(q, tape.transpose(k)), 1.0 / np.sqrt(dh))
    if not np.all(np.isfinite(tape.value(scores))):
        raise NumericError("non-finite attention scores")
    attn = tape.softmax(scores, axis=-1, mask=causal_mask(T) if causal else None)
    o = tape.reshape(tape.transpose(tape.matmul(attn, v), (0, 2, 1, 3)), (B, T, D))
    attn_out = tape.matmul(o, p["wo"])
    out = tape.add(x, attn_out)
    if "w1" not in p:  # ffn_mult = 0: attention-only block
        return out
    f = tape.layernorm(x, p["ln2.g"], p["ln2.b"])
    f = tape.relu(tape.add(tape.matmul(f, p["w1"]), p["b1"]))
    return tape.add(out, tape.add(tape.matmul(f, p["w2"]), p["b2"]))


def transformer_layer(z: np.ndarray, weights: dict, num_heads: int, causal: bool = True) -> np.ndarray:
    """Apply one block to ``z`` of shape ``(B, T, d_model)``; ``weights`` uses unprefixed names."""
    tape = Tape()
    p = {k: tape.const(v) for k, v in weights.items()}
    return tape.value(_layer_on_tape(tape, tape.const(z), p, num_heads, causal))


def positions(T: int, config: ModelConfig) -> tuple[np.ndarray, bool]:
    """Position indices, clamped to the last learned entry; flag tells whether clamping happened."""
    idx = np.arange(T)
    return np.minimum(idx, config.max_positions - 1), T > config.max_positions


def record_model(model: Model, tape: Tape, tokens, causal: bool = True, clamp: bool = True) -> int:
    """Record the full forward pass; returns the output node.

    Classify readout: logits ``(B, T, n_classes)`` (final layer norm first).
    Regress readout: ``(B,)`` read from the residual stream at the last position.
    """
    cfg = model.config
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None]
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        raise InputError(f"token outside vocabulary of size {cfg.vocab_size}")
    B, T = tokens.shape
    if T == 0:
        raise InputError("model_forward needs at least one position")
    p = {k: tape.param(k, v) for k, v in model.weights.items()}
    x = tape.embedding(p["tok_emb"], tokens)
    if cfg.positional == "learned_absolute":
        idx, clamped = positions(T, cfg)
        if clamped and not clamp:
            raise InputError(f"sequence length {T} exceeds max_positions {cfg.max_positions}")
        x = tape.add(x, tape.embedding(p["pos_emb"], idx))
    h = record_head(model.head, tape, tokens) if model.head is not None else None
    for l in range(cfg.num_layers):
        pre = f"layer{l}."
        if h is not None:
            x = tape.add(x, tape.matmul(h, tape.transpose(p[pre + "w_proj"])))
        lp = {k[len(pre):]: v for k, v in p.items() if k.startswith(pre)}
        x = _layer_on_tape(tape, x, lp, cfg.num_heads, causal)
    if cfg.readout == "classify":
        x = tape.layernorm(x, p["lnf.g"], p["lnf.b"])
        return tape.add(tape.matmul(x, p["w_out"]), p["b_out"])
    last = tape.slice(x, (slice(None), T - 1))
    return tape.reshape(tape.add(tape.matmul(last, p["w_out"]), p["b_out"]), (B,))


def model_forward(model: Model, tokens, causal: bool = True, clamp: bool = True) -> np.ndarray:
    tape = Tape()
    return tape.value(record_model(model, tape, tokens, causal, clamp))
