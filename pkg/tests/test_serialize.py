import numpy as np
import pytest

from rational_transductor import __version__
from rational_transductor.backbone import ModelConfig, init_model, model_forward
from rational_transductor.errors import ConfigError, InputError
from rational_transductor.serialize import (apply_overrides, load_config, load_model, load_wfa, read_report,
                                            read_tensors, save_model, save_wfa, write_report, write_table)
from rational_transductor.trainer import TrainConfig
from rational_transductor.wfa_core import make_mod_counter


@pytest.mark.parametrize("head", [None, {"kind": "scaled_cayley", "conserve": False}, {"kind": "dplr", "rank": 2},
                                  {"kind": "mixture", "subheads": [{"kind": "stochastic", "dim": 2},
                                                                   {"kind": "scaled_cayley", "dim": 3}]}])
def test_model_roundtrip_bit_exact(tmp_path, head, rng):
    cfg = ModelConfig(vocab_size=3, d_model=8, num_layers=1, num_heads=2, d_rat=0 if head is None else 5, head=head,
                      positional="learned_absolute", max_positions=16)
    model = init_model(cfg, seed=7)
    save_model(model, tmp_path / "m.ckpt")
    back = load_model(tmp_path / "m.ckpt")
    for k, v in model.named_params().items():
        assert np.array_equal(back.named_params()[k], v)
    tokens = rng.integers(0, 3, (2, 9))
    assert np.array_equal(model_forward(back, tokens), model_forward(model, tokens))


def test_f32_roundtrip(tmp_path):
    model = init_model(ModelConfig(vocab_size=2, d_model=8, num_layers=1, num_heads=2), dtype=np.float32)
    save_model(model, tmp_path / "m.ckpt")
    assert load_model(tmp_path / "m.ckpt").dtype == np.float32


def test_wfa_roundtrip(tmp_path):
    w = make_mod_counter(4)
    save_wfa(w, tmp_path / "w.ckpt")
    back = load_wfa(tmp_path / "w.ckpt")
    assert np.array_equal(back.transitions, w.transitions) and np.array_equal(back.alpha, w.alpha)


def test_corrupt_checkpoint(tmp_path):
    p = tmp_path / "bad.ckpt"
    p.write_bytes(b"garbage")
    with pytest.raises(InputError):
        read_tensors(p)
    save_wfa(make_mod_counter(2), p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(InputError):
        read_tensors(p)


def test_report_and_table(tmp_path):
    write_report({"x": np.float64(1.5), "arr": np.arange(3)}, tmp_path / "r.json")
    rec = read_report(tmp_path / "r.json")
    assert rec["code_version"] == __version__ and rec["arr"] == [0, 1, 2]
    rows = [("rt", 0, 50, "token_acc", 0.1 + 0.2)]
    write_table(rows, tmp_path / "a.csv")
    text = (tmp_path / "a.csv").read_text().splitlines()
    assert text[0] == "model,seed,length,metric,value"
    assert float(text[1].split(",")[-1]) == 0.1 + 0.2


def test_config_errors(tmp_path):
    bad = tmp_path / "c.yaml"
    bad.write_text("train: [1, 2\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError, match="train.stepz"):
        apply_overrides(TrainConfig(), {"stepz": 3}, "train")
    with pytest.raises(ConfigError, match="train.steps"):
        apply_overrides(TrainConfig(), {"steps": "many"}, "train")
    assert apply_overrides(TrainConfig(), {"steps": 7}, "train").steps == 7
