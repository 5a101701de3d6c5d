"""Optimizers, schedules and the multi-seed training/evaluation protocol."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .autodiff import Tape, backward
from .backbone import Model, ModelConfig, init_model, record_model
from .errors import InputError, NumericError
from .rational_head import audit, reproject
from .tasks import TaskBatch, generate

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
DIVERGENCE_LOSS = 1e6
ATTENTION_BUDGET = 2e7  # score entries per evaluation chunk


@dataclass
class TrainConfig:
    steps: int = 3000
    batch_size: int = 64
    learning_rate: float = 5e-3
    optimizer: str = "adamw"
    weight_decay: float = 0.01
    schedule: str = "constant"
    clip_norm: float = 1.0
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    precision: str = "f32"
    loss: str = "cross_entropy"
    eval_every: int = 500
    audit_every: int = 100
    n_per_length: int = 256
    n_per_length_interim: int = 32
    freeze: list = field(default_factory=list)  # parameter-name prefixes kept fixed

    def __post_init__(self):
        if self.optimizer not in ("adam", "adamw"):
            raise InputError(f"optimizer must be adam or adamw, got {self.optimizer!r}")
        if self.schedule not in ("constant", "cosine"):
            raise InputError(f"schedule must be constant or cosine, got {self.schedule!r}")
        if self.precision not in ("f32", "f64"):
            raise InputError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.loss not in ("cross_entropy", "mse"):
            raise InputError(f"loss must be cross_entropy or mse, got {self.loss!r}")
        if self.steps < 0 or self.batch_size < 1:
            raise InputError("steps must be >= 0 and batch_size >= 1")

    @property
    def dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


@dataclass
class TaskSpec:
    kind: str  # mod_count | parity | addition | base2
    train_len: int
    k: int = 5
    min_len: int | None = None  # addition: L ~ U[min_len, train_len]
    eval_lengths: list = field(default_factory=list)
    dataset_size: int | None = None  # fixed training set (epochs) instead of fresh batches

    def sample(self, n: int, rng, length: int | None = None) -> TaskBatch:
        if length is None:
            return generate(self.kind, self.train_len, n, rng, k=self.k, min_len=self.min_len)
        return generate(self.kind, length, n, rng, k=self.k)


# --------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    if not 0 <= step <= total_steps:
        raise InputError("cosine_lr needs 0 <= step <= total_steps")
    if total_steps == 0:
        return base_lr
    return base_lr * (1 + math.cos(math.pi * step / total_steps)) / 2


def global_norm(grads: dict) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))


def clip_gradients(grads: dict, max_norm: float) -> tuple[dict, float]:
    """Rescale so the global l2 norm is at most ``max_norm``; returns (grads, pre-clip norm)."""
    if max_norm <= 0:
        raise InputError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    s = max_norm / norm
    return {k: g * g.dtype.type(s) for k, g in grads.items()}, norm


def optimizer_step(params: dict, grads: dict, state: AdamState, lr: float, weight_decay: float = 0.0) -> None:
    """In-place Adam step; ``weight_decay > 0`` gives decoupled (AdamW) decay on matrices."""
    b1, b2 = ADAM_BETAS
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
    state.t += 1
    c1 = 1 - b1**state.t
    c2 = 1 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        g = g.astype(p.dtype, copy=False)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        if weight_decay and p.ndim >= 2:
            p -= p.dtype.type(lr * weight_decay) * p
        p -= p.dtype.type(lr) * update.astype(p.dtype, copy=False)


# ------------------------------------------------------------------- loss


def loss_on_tape(model: Model, batch: TaskBatch, loss_kind: str) -> tuple[Tape, int]:
    tape = Tape()
    out = record_model(model, tape, batch.tokens)
    if loss_kind == "cross_entropy":
        return tape, tape.cross_entropy(out, batch.targets)
    target = tape.const(np.asarray(batch.targets, dtype=model.dtype))
    return tape, tape.mse(out, target)


def loss_and_grads(model: Model, batch: TaskBatch, loss_kind: str, frozen=()) -> tuple[float, dict]:
    tape, loss = loss_on_tape(model, batch, loss_kind)
    grads = backward(tape, loss)
    if frozen:
        grads = {k: g for k, g in grads.items() if not k.startswith(tuple(frozen))}
    return float(tape.value(loss)), grads


# ------------------------------------------------------------- evaluation


def predict(model: Model, tokens: np.ndarray) -> np.ndarray:
    """Forward in chunks sized to keep the attention scores within budget."""
    T = tokens.shape[-1]
    per_example = model.config.num_heads * T * T * max(model.config.num_layers, 1)
    chunk = int(max(1, min(len(tokens), ATTENTION_BUDGET // max(per_example, 1))))
    outs = []
    for i in range(0, len(tokens), chunk):
        tape = Tape()
        outs.append(tape.value(record_model(model, tape, tokens[i : i + chunk])))
    return np.concatenate(outs, axis=0)


def batch_metrics(model: Model, batch: TaskBatch) -> dict:
    out = predict(model, batch.tokens)
    if batch.kind == "base2":
        err = out.astype(np.float64) - batch.targets
        return {"mse": float(np.mean(err * err))}
    pred = np.argmax(out, axis=-1)
    hit = pred == batch.targets
    return {
        "token_acc": float(hit.mean()),
        "final_acc": float(hit[:, -1].mean()),
        "seq_acc": float(hit.all(axis=1).mean()),
    }


def evaluate(model: Model, task: TaskSpec, lengths, n_per_length: int = 256, seed=0) -> dict:
    """Metrics per evaluation length: ``{length: {metric: value}}``."""
    results = {}
    for L in lengths:
        rng = np.random.default_rng([int(seed), int(L), 7])
        results[int(L)] = batch_metrics(model, task.sample(n_per_length, rng, length=int(L)))
    return results


# --------------------------------------------------------------- training


@dataclass
class SeedRun:
    seed: int
    loss_trace: list = field(default_factory=list)
    history: list = field(default_factory=list)  # (step, {length: metrics}) interim evaluations
    final: dict = field(default_factory=dict)
    audits: list = field(default_factory=list)  # (step, {check: (ok, value)})
    failed: str | None = None
    seconds: float = 0.0


@dataclass
class TrainReport:
    model_config: dict
    train_config: dict
    task: dict
    runs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(runs: list) -> dict:
    """Mean and standard deviation across non-failed seeds, per length and metric."""
    ok = [r for r in runs if r.failed is None and r.final]
    out = {}
    if not ok:
        return out
    for L in ok[0].final:
        out[L] = {}
        for metric in ok[0].final[L]:
            vals = np.array([r.final[L][metric] for r in ok])
            out[L][metric] = {"mean": float(vals.mean()), "std": float(vals.std()), "n": len(vals)}
    return out


def train_seed(model_config: ModelConfig, cfg: TrainConfig, task: TaskSpec, seed: int, log=None) -> tuple[Model, SeedRun]:
    t0 = time.perf_counter()
    model = init_model(model_config, seed, dtype=cfg.dtype)
    run = SeedRun(seed=int(seed))
    data_rng = np.random.default_rng([int(seed), 11])
    dataset = None
    if task.dataset_size:
        dataset = task.sample(task.dataset_size, data_rng)
        order = np.arange(0)
    state = AdamState()
    params = model.named_params()
    lengths = task.eval_lengths or [task.train_len]
    for step in range(cfg.steps):
        if dataset is None:
            batch = task.sample(cfg.batch_size, data_rng)
        else:
            if order.size < cfg.batch_size:
                order = data_rng.permutation(task.dataset_size)
            idx, order = order[: cfg.batch_size], order[cfg.batch_size :]
            batch = TaskBatch(dataset.kind, dataset.tokens[idx], dataset.targets[idx], dataset.lengths[idx], dataset.k)
        try:
            loss, grads = loss_and_grads(model, batch, cfg.loss, cfg.freeze)
        except NumericError as exc:
            run.failed = f"step {step}: {exc}"
            break
        run.loss_trace.append(loss)
        if not math.isfinite(loss) or loss > DIVERGENCE_LOSS:
            run.failed = f"diverged at step {step} (loss {loss:.3g})"
            break
        grads, _ = clip_gradients(grads, cfg.clip_norm)
        lr = cosine_lr(step, cfg.steps, cfg.learning_rate) if cfg.schedule == "cosine" else cfg.learning_rate
        optimizer_step(params, grads, state, lr, cfg.weight_decay if cfg.optimizer == "adamw" else 0.0)
        if model.head is not None:
            reproject(model.head)
            if (step + 1) % cfg.audit_every == 0:
                run.audits.append((step + 1, audit(model.head)))
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0 and step + 1 < cfg.steps:
            run.history.append((step + 1, evaluate(model, task, lengths, cfg.n_per_length_interim, seed)))
            if log:
                log(f"seed {seed} step {step + 1} loss {loss:.4g}")
    if run.failed is None:
        run.final = evaluate(model, task, lengths, cfg.n_per_length, seed)
    run.seconds = time.perf_counter() - t0
    return model, run


def train(model_config: ModelConfig, cfg: TrainConfig, task: TaskSpec, log=None) -> tuple[list, TrainReport]:
    """Train one model per seed; returns (models, report)."""
    report = TrainReport(
        model_config=model_config.to_dict(),
        train_config=asdict(cfg),
        task=asdict(task),
        notes={"adam_betas": list(ADAM_BETAS), "adam_eps": ADAM_EPS, "loss_positions": _loss_note(task)},
    )
    models = []
    for seed in cfg.seeds:
        model, run = train_seed(model_config, cfg, task, seed, log)
        models.append(model)
        report.runs.append(run)
        if log:
            log(f"seed {seed} done in {run.seconds:.1f}s" + (f" FAILED: {run.failed}" if run.failed else ""))
    report.summary = summarize(report.runs)
    return models, report


def _loss_note(task: TaskSpec) -> str:
    if task.kind == "base2":
        return "final position (regression)"
    note = "every position (per-token labels)"
    if task.kind == "addition":
        note += "; pair tokens 10*a+b, least-significant digit first; final carry-out dropped"
    return note


def audit_failures(run: SeedRun) -> list:
    return [(step, name, val) for step, res in run.audits for name, (ok, val) in res.items() if not ok]
