import json

import numpy as np
import pytest
import yaml

from rational_transductor.bench import attention, bench_latency, parallel_scan, sequential_rnn
from rational_transductor.cli import main
from rational_transductor.errors import ConfigError, InputError
from rational_transductor.experiments import default_spec, emit_plot_data, resolve_spec, run_experiment, verify_all
from rational_transductor.serialize import write_table


def test_bench_counts():
    rep = bench_latency([128, 256, 512], trials=20, attention_max_T=256)
    by = {(r.kernel, r.T): r for r in rep.rows}
    assert by[("parallel_scan", 512)].levels == 9
    assert by[("sequential_rnn", 256)].steps == 256
    assert by[("attention", 256)].flops / by[("attention", 128)].flops == 4.0
    assert by[("attention", 512)].timed is False and by[("attention", 512)].median_ms is None
    with pytest.raises(InputError):
        bench_latency([128], trials=5)


def test_bench_kernels_agree(rng):
    q, _ = np.linalg.qr(rng.standard_normal((100, 4, 4)))
    a = rng.standard_normal(4)
    assert np.allclose(sequential_rnn(q, a)[0], parallel_scan(q, a)[0][-1], atol=1e-12)
    x = rng.standard_normal((700, 8))
    w = [np.eye(8)] * 3
    out, blocks = attention(x, *w, num_heads=2)
    assert out.shape == (700, 8) and blocks == 2


def test_table2_defaults():
    spec = default_spec("mod5")
    tc = spec.train
    assert (tc.steps, tc.batch_size, tc.learning_rate, tc.optimizer, tc.schedule, tc.clip_norm, tc.precision) == \
        (3000, 64, 5e-3, "adamw", "constant", 1.0, "f32")
    rt = spec.models["rt"]
    assert (rt.d_model, rt.d_rat, rt.num_layers, rt.num_heads, rt.head["kind"]) == (32, 8, 2, 4, "scaled_cayley")
    assert spec.task.train_len == 50 and spec.task.eval_lengths[-1] == 500
    lg = default_spec("lengen")
    assert lg.train.schedule == "cosine" and lg.task.train_len == 40
    ad = default_spec("addition")
    assert ad.models["rt"].head["kind"] == "stochastic" and ad.models["rt"].d_rat == 4 and ad.train.steps == 4000
    assert (ad.task.min_len, ad.task.train_len) == (10, 40)
    b2 = default_spec("base2")
    assert (b2.train.steps, b2.train.batch_size, b2.train.learning_rate, b2.train.optimizer, b2.train.precision,
            b2.train.loss) == (3600, 32, 1e-2, "adam", "f64", "mse")
    assert (b2.models["rt"].d_model, b2.models["rt"].num_layers, b2.models["transformer"].num_layers) == (12, 1, 3)


def test_unknown_experiment():
    with pytest.raises(ConfigError, match="valid names: mod5"):
        default_spec("nope")


def test_resolve_overrides_recorded():
    spec = resolve_spec("mod5", {"train": {"steps": 5}, "models": {"rt": {"d_rat": 4}}}, seed=3)
    assert spec.train.steps == 5 and spec.train.seeds == [3] and spec.models["rt"].d_rat == 4
    assert spec.resolved()["overrides"]["train"] == {"steps": 5, "seeds": [3]}
    with pytest.raises(ConfigError, match="models.rt.bogus"):
        resolve_spec("mod5", {"models": {"rt": {"bogus": 1}}})
    with pytest.raises(ConfigError, match="unknown section"):
        resolve_spec("mod5", {"trian": {}})


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    spec = resolve_spec("mod5", {"train": {"steps": 3, "seeds": [0, 1], "eval_every": 0, "n_per_length": 4,
                                           "precision": "f64"}}, out_dir=out)
    return run_experiment(spec), out


def test_run_experiment_outputs(tiny_run):
    result, out = tiny_run
    d = out / "mod5"
    assert {p.name for p in d.iterdir()} >= {"report.json", "metrics.csv", "config.yaml", "rt_seed0.ckpt"}
    rows = emit_plot_data(json.loads((d / "report.json").read_text()))
    assert len(rows) == 2 * 6 * 2
    cfg = yaml.safe_load((d / "config.yaml").read_text())
    assert cfg["train"]["steps"] == 3 and cfg["overrides"]["train"]["steps"] == 3
    assert json.loads((d / "report.json").read_text())["code_version"]


def test_plot_data_idempotent(tiny_run, tmp_path):
    _, out = tiny_run
    rep = json.loads((out / "mod5" / "report.json").read_text())
    write_table(emit_plot_data(rep), tmp_path / "a.csv")
    write_table(emit_plot_data(rep), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes() == \
        (out / "mod5" / "metrics.csv").read_bytes()


def test_verify_all_and_fault(capsys):
    code, results = verify_all(0)
    assert code == 0 and all(r.passed for r in results)
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == len(results) and all("measured=" in line and "bound=" in line for line in lines)
    code, results = verify_all(0, fault="cayley")
    assert code != 0
    assert [r.name for r in results if not r.passed] == ["cayley_orthogonality_audit"]


def test_cli_verify_and_eval(tmp_path, tiny_run, monkeypatch, capsys):
    monkeypatch.setenv("RT_OUTPUT_ROOT", str(tmp_path))
    assert main(["verify"]) == 0
    assert (tmp_path / "verify" / "report.json").exists()
    assert main(["verify", "--fault", "cayley"]) == 1
    _, out = tiny_run
    assert main(["eval", str(out / "mod5" / "rt_seed0.ckpt"), "mod5", "--lengths", "10,20", "--n", "4"]) == 0
    assert "L=20" in capsys.readouterr().out
    assert main(["train", "nope"]) == 2


def test_cli_train_with_config(tmp_path, monkeypatch):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("train: {steps: 2, eval_every: 0, n_per_length: 2}\ntask: {eval_lengths: [8]}\n")
    monkeypatch.setenv("RT_OUTPUT_ROOT", str(tmp_path / "o"))
    assert main(["train", "base2", "--config", str(cfg), "--seed", "0"]) == 0
    assert (tmp_path / "o" / "base2" / "metrics.csv").read_text().count("\n") == 3
    bad = tmp_path / "bad.yaml"
    bad.write_text("train: {steps: -1}\n")
    assert main(["train", "base2", "--config", str(bad)]) == 2


def test_cli_bench(tmp_path, capsys):
    assert main(["bench", "--tmin", "128", "--tmax", "256", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "parallel_scan" in out and (tmp_path / "bench" / "latency.csv").exists()
