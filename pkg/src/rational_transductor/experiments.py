"""Named experiments, their default hyperparameters, and the verification driver."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import theory_verify
from .backbone import ModelConfig
from .bench import DEFAULT_GRID, bench_latency
from .errors import ConfigError
from .rational_head import adjoint_grads, init_near_identity, make_head, transition_table
from .scan import scan_backward, scan_forward, sequential_backward, sequential_forward
from .serialize import apply_overrides, save_model, write_report, write_table
from .trainer import TaskSpec, TrainConfig, train
from .wfa_core import (eval_sequential, hankel_rank, horner_value, make_horner, make_mod_counter, make_parity,
                       make_rope)

EXPERIMENTS = ("mod5", "lengen", "addition", "base2", "bench", "verify")

MOD5_GRID = [50, 100, 200, 300, 400, 500]
LENGEN_GRID = [40, 100, 200, 400, 600, 800, 1000]
ADDITION_GRID = [20, 50, 100, 200, 500, 1000]


@dataclass
class ExperimentSpec:
    name: str
    models: dict = field(default_factory=dict)  # label -> ModelConfig
    train: TrainConfig | None = None
    task: TaskSpec | None = None
    out_dir: str = "runs"
    overrides: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        out = {"name": self.name, "out_dir": str(self.out_dir), "overrides": self.overrides}
        if self.models:
            out["models"] = {k: m.to_dict() for k, m in self.models.items()}
        if self.train is not None:
            out["train"] = dataclasses.asdict(self.train)
        if self.task is not None:
            out["task"] = dataclasses.asdict(self.task)
        if self.bench:
            out["bench"] = self.bench
        return out


def _counting(train_len: int, grid: list, schedule: str) -> tuple[dict, TrainConfig, TaskSpec]:
    rt = ModelConfig(vocab_size=2, d_model=32, num_layers=2, num_heads=4, d_rat=8,
                     head={"kind": "scaled_cayley", "conserve": True}, positional="none", n_classes=5)
    tf = ModelConfig(vocab_size=2, d_model=32, num_layers=2, num_heads=4, positional="learned_absolute",
                     max_positions=train_len, n_classes=5)
    tc = TrainConfig(steps=3000, batch_size=64, learning_rate=5e-3, optimizer="adamw", schedule=schedule,
                     clip_norm=1.0, precision="f32", loss="cross_entropy")
    return {"rt": rt, "transformer": tf}, tc, TaskSpec("mod_count", train_len, k=5, eval_lengths=list(grid))


def default_spec(name: str) -> ExperimentSpec:
    """The defaults of each named experiment (the hyperparameter table of the experiments)."""
    if name == "mod5":
        models, tc, task = _counting(50, MOD5_GRID, "constant")
    elif name == "lengen":
        models, tc, task = _counting(40, LENGEN_GRID, "cosine")
    elif name == "addition":
        models = {
            "rt": ModelConfig(vocab_size=100, d_model=32, num_layers=2, num_heads=4, d_rat=4,
                              head={"kind": "stochastic"}, positional="none", n_classes=10),
            "transformer": ModelConfig(vocab_size=100, d_model=32, num_layers=2, num_heads=4,
                                       positional="learned_absolute", max_positions=5000, n_classes=10),
        }
        tc = TrainConfig(steps=4000, batch_size=64, learning_rate=5e-3, optimizer="adamw", schedule="constant",
                         clip_norm=1.0, precision="f32", loss="cross_entropy")
        task = TaskSpec("addition", 40, min_len=10, eval_lengths=list(ADDITION_GRID))
    elif name == "base2":
        models = {
            "rt": ModelConfig(vocab_size=2, d_model=12, num_layers=1, num_heads=4, d_rat=12,
                              head={"kind": "affine"}, positional="none", readout="regress"),
            "transformer": ModelConfig(vocab_size=2, d_model=32, num_layers=3, num_heads=4,
                                       positional="learned_absolute", max_positions=64, readout="regress"),
        }
        # 60 epochs over 1,920 examples at batch 32 = 3,600 steps.
        tc = TrainConfig(steps=3600, batch_size=32, learning_rate=1e-2, optimizer="adam", schedule="cosine",
                         clip_norm=1.0, precision="f64", loss="mse")
        task = TaskSpec("base2", 64, eval_lengths=[64], dataset_size=1920)
    elif name == "bench":
        return ExperimentSpec("bench", bench={"t_grid": list(DEFAULT_GRID), "trials": 20, "attention_max_T": 4096})
    elif name == "verify":
        return ExperimentSpec("verify")
    else:
        raise ConfigError("name", f"unknown experiment {name!r}; valid names: {', '.join(EXPERIMENTS)}")
    return ExperimentSpec(name, models, tc, task)


def resolve_spec(name: str, config: dict | None = None, seed: int | None = None, out_dir=None) -> ExperimentSpec:
    """Defaults for ``name`` with a config mapping (sections ``train``, ``task``, ``models``, ``bench``) applied."""
    spec = default_spec(name)
    config = copy.deepcopy(config or {})
    unknown = set(config) - {"train", "task", "models", "bench", "out_dir"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section (valid: train, task, models, bench, out_dir)")
    if "train" in config:
        spec.train = apply_overrides(spec.train, config["train"], "train")
    if "task" in config:
        spec.task = apply_overrides(spec.task, config["task"], "task")
    for label, over in (config.get("models") or {}).items():
        if label not in spec.models:
            raise ConfigError(f"models.{label}", f"unknown model (valid: {', '.join(spec.models)})")
        spec.models[label] = apply_overrides(spec.models[label], over, f"models.{label}")
    if "bench" in config:
        if not isinstance(config["bench"], dict):
            raise ConfigError("bench", "expected a mapping")
        for key in config["bench"]:
            if key not in spec.bench:
                raise ConfigError(f"bench.{key}", f"unknown field (valid: {', '.join(spec.bench)})")
        spec.bench.update(config["bench"])
    if seed is not None and spec.train is not None:
        spec.train = dataclasses.replace(spec.train, seeds=[int(seed)])
        config.setdefault("train", {})["seeds"] = [int(seed)]
    spec.overrides = config
    if out_dir is not None:
        spec.out_dir = str(out_dir)
    elif "out_dir" in config:
        spec.out_dir = str(config["out_dir"])
    return spec


# ------------------------------------------------------------- plot data


HEADLINE = {"mod_count": "token_acc", "parity": "token_acc", "addition": "seq_acc", "base2": "mse"}


def emit_plot_data(report: dict, metrics=None) -> list:
    """Flat rows ``(model, seed, length, metric, value)`` from an experiment or bench report.

    Training reports give one row per model, seed and length with the task's
    headline metric unless ``metrics`` names others.
    """
    rows = []
    if "bench" in report:
        for r in report["bench"]["rows"]:
            for metric in ("median_ms", "iqr_ms", "levels", "steps", "flops"):
                if r[metric] is not None:
                    rows.append((r["kernel"], 0, int(r["T"]), metric, float(r[metric])))
        return rows
    for label, rep in report["models"].items():
        wanted = metrics or [HEADLINE[rep["task"]["kind"]]]
        for run in rep["runs"]:
            for length in sorted(run["final"], key=int):
                for metric in wanted:
                    rows.append((label, int(run["seed"]), int(length), metric, float(run["final"][length][metric])))
    return rows


# -------------------------------------------------------------- running


def run_experiment(spec: ExperimentSpec, log=None, save_checkpoints: bool = True) -> dict:
    """Run ``spec`` and write ``report.json``, ``metrics.csv`` and ``config.yaml`` under ``out_dir/name``."""
    out = Path(spec.out_dir) / spec.name
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from exc
    resolved = spec.resolved()
    (out / "config.yaml").write_text(yaml.safe_dump(_plain(resolved), sort_keys=False))
    if spec.name == "verify":
        code, results = verify_all(log=log)
        record = {"config": resolved, "verify": [r.to_dict() for r in results], "exit_status": code}
        write_report(record, out / "report.json")
        return {"report": record, "dir": str(out)}
    if spec.name == "bench":
        bench = bench_latency(spec.bench["t_grid"], spec.bench["trials"], attention_max_T=spec.bench["attention_max_T"])
        record = {"config": resolved, "bench": bench.to_dict()}
        write_report(record, out / "report.json")
        write_table(emit_plot_data(_roundtrip(record)), out / "latency.csv")
        return {"report": record, "dir": str(out)}

    record = {"config": resolved, "models": {}}
    for label, mcfg in spec.models.items():
        if log:
            log(f"[{spec.name}] training {label}")
        models, rep = train(mcfg, spec.train, spec.task, log=log)
        clamped = mcfg.positional == "learned_absolute" and max(spec.task.eval_lengths) > mcfg.max_positions
        rep.notes["clamped_positions"] = bool(clamped)
        record["models"][label] = rep.to_dict()
        if save_checkpoints:
            for m, run in zip(models, rep.runs):
                save_model(m, out / f"{label}_seed{run.seed}.ckpt")
    write_report(record, out / "report.json")
    write_table(emit_plot_data(_roundtrip(record)), out / "metrics.csv")
    return {"report": record, "dir": str(out)}


def _plain(obj):
    from .serialize import to_jsonable

    return to_jsonable(obj)


def _roundtrip(record: dict) -> dict:
    # Plot data is emitted from the serialised form so it does not depend on in-memory types.
    import json

    return json.loads(json.dumps(_plain(record)))


# ---------------------------------------------------------------- verify


@dataclass
class SuiteCheck:
    name: str
    passed: bool
    measured: float
    bound: float

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"{flag}  {self.name:<28} measured={self.measured:.3e}  bound={self.bound:.3e}"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


HEAD_KINDS = {
    "scaled_cayley": {},
    "scaled_cayley_decay": {"conserve": False},
    "stochastic": {},
    "dplr": {"rank": 2, "gamma": 0.95},
    "affine": {},
    "shared_basis": {"n_basis": 3},
    "mixture": {"subheads": [{"kind": "scaled_cayley", "dim": 2}, {"kind": "stochastic", "dim": 2},
                             {"kind": "dplr", "dim": 2, "rank": 1}]},
}


def oracle_head(name: str, d: int, rng, alphabet_size: int = 3):
    """A randomly initialised head of each kind used by the oracle suites."""
    kind = "scaled_cayley" if name.startswith("scaled_cayley") else name
    opts = copy.deepcopy(HEAD_KINDS[name])
    if kind == "mixture":
        opts["subheads"] = [dict(s, alphabet_size=alphabet_size) for s in opts["subheads"]]
    head = make_head(kind, d, alphabet_size, **opts)
    return init_near_identity(head, 0.05, 0.1, rng)


SCAN_LENGTHS = (1, 2, 3, 7, 64, 1000, 4096)


def scan_oracle_error(kind: str, T: int, seed=0, d: int = 4) -> float:
    """Max abs difference between scans and sequential loops (forward states and adjoints)."""
    rng = np.random.default_rng([seed, T])
    head = oracle_head(kind, d, rng)
    d = head.dim
    if kind == "affine":
        head.params["b"] = rng.standard_normal((3, d))
    table, bias = transition_table(head)
    if kind in ("affine", "shared_basis"):
        # Unconstrained kinds: compare in the non-expansive regime, where an absolute tolerance is meaningful.
        table = table * (0.95 / np.linalg.norm(table, ord=2, axis=(-2, -1)))[:, None, None]
    tokens = rng.integers(0, 3, T)
    ops = table[tokens]
    biases = None if bias is None else bias[tokens]
    alpha = head.alpha if kind != "affine" else rng.standard_normal(d)
    f_err = np.max(np.abs(scan_forward(ops, alpha, biases) - sequential_forward(ops, alpha, biases)))
    inj = rng.standard_normal((T, d))
    dT = rng.standard_normal(d)
    b_err = np.max(np.abs(scan_backward(ops, inj, dT) - sequential_backward(ops, inj, dT)))
    return float(max(f_err, b_err))


def automata_oracle_errors(n: int = 1000, seed=0) -> dict:
    """Mismatches of the canonical constructions against brute-force oracles over ``n`` random inputs each.

    Parity, mod-k (k in 2..7) and base-10 Horner are counted exactly; RoPE
    reports the max abs deviation from (cos t*theta, sin t*theta).
    """
    rng = np.random.default_rng(seed)
    par = make_parity()
    counters = {k: make_mod_counter(k) for k in range(2, 8)}
    horner = make_horner(10)
    bad = {"parity": 0, "mod_k": 0, "horner10": 0, "rope": 0.0}
    for _ in range(n):
        bits = rng.integers(0, 2, int(rng.integers(0, 40)))
        ones = int(bits.sum())
        bad["parity"] += int(not np.array_equal(eval_sequential(par, bits)[-1], np.eye(2)[ones % 2]))
        k = int(rng.integers(2, 8))
        bad["mod_k"] += int(not np.array_equal(eval_sequential(counters[k], bits)[-1], np.eye(k)[ones % k]))
        digits = rng.integers(0, 10, int(rng.integers(1, 13)))
        bad["horner10"] += int(horner_value(horner, digits) != int("".join(map(str, digits))))
        freqs = rng.uniform(0, np.pi, 2)
        t = int(rng.integers(0, 50))
        h = eval_sequential(make_rope(freqs), np.zeros(t, dtype=int))[-1]
        expect = np.ravel(np.column_stack([np.cos(t * freqs), np.sin(t * freqs)]))
        bad["rope"] = max(bad["rope"], float(np.max(np.abs(h - expect))))
    return bad


def cayley_orthogonality_defect(seed=0, fault: bool = False, d: int = 8) -> float:
    rng = np.random.default_rng(seed)
    head = init_near_identity(make_head("scaled_cayley", d, 3), 0.0, 0.1, rng)
    table, _ = transition_table(head)
    if fault:
        table = table + 1e-3 * rng.standard_normal(table.shape)
    return float(np.max(np.abs(np.swapaxes(table, -1, -2) @ table - np.eye(d))))


def verify_all(seed=0, fault: str | None = None, log=print) -> tuple[int, list]:
    """Run every theory check plus the oracle suites; returns (exit status, results)."""
    results = list(theory_verify.run_all(seed))
    worst = max(scan_oracle_error(k, T, seed) for k in HEAD_KINDS for T in SCAN_LENGTHS)
    results.append(SuiteCheck("scan_vs_sequential", worst <= 1e-10, worst, 1e-10))
    bad = automata_oracle_errors(seed=seed)
    for name in ("parity", "mod_k", "horner10"):
        results.append(SuiteCheck(f"automaton_{name}", bad[name] == 0, float(bad[name]), 0.0))
    results.append(SuiteCheck("automaton_rope", bad["rope"] <= 1e-12, bad["rope"], 1e-12))
    for name, wfa, expect in [("hankel_parity", make_parity(), 2), ("hankel_mod5", make_mod_counter(5), 5)]:
        rank = hankel_rank(wfa, 5)
        results.append(SuiteCheck(name, rank == expect, float(rank), float(expect)))
    defect = cayley_orthogonality_defect(seed, fault == "cayley")
    results.append(SuiteCheck("cayley_orthogonality_audit", defect <= 1e-10, defect, 1e-10))
    if log:
        for r in results:
            log(r.line())
    code = 0 if all(r.passed for r in results) else 1
    return code, results
