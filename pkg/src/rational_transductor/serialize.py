"""Checkpoints, report records and configuration files.

Checkpoint layout: one JSON header line terminated by ``\\n``, then the raw
little-endian float64 payload of every tensor in header order::

    {"version": 1, "format": "rt-checkpoint", "config": {...},
     "tensors": [{"name": ..., "shape": [...], "tag": ..., "dtype": ...}, ...]}
    <payload bytes>

All writes go to a temporary file that is renamed into place.
"""

from __future__ import annotations

import dataclasses
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .backbone import Model, ModelConfig
from .errors import ConfigError, InputError
from .rational_head import head_from_config
from .wfa_core import Wfa

CHECKPOINT_VERSION = 1


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ------------------------------------------------------------ checkpoints


def write_tensors(path, tensors: list, config: dict) -> None:
    """``tensors`` is a list of ``(name, array, tag)``."""
    header = {"version": CHECKPOINT_VERSION, "format": "rt-checkpoint", "code_version": __version__,
              "config": config, "tensors": []}
    payload = []
    for name, arr, tag in tensors:
        arr = np.asarray(arr)
        header["tensors"].append({"name": name, "shape": list(arr.shape), "tag": tag, "dtype": arr.dtype.str})
        payload.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    atomic_write(path, json.dumps(header).encode() + b"\n" + b"".join(payload))


def read_tensors(path) -> tuple[dict, list]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise InputError(f"{path}: missing checkpoint header")
    header = json.loads(raw[:nl])
    if header.get("format") != "rt-checkpoint":
        raise InputError(f"{path}: not a checkpoint file")
    if header.get("version") != CHECKPOINT_VERSION:
        raise InputError(f"{path}: unsupported checkpoint version {header.get('version')}")
    offset = nl + 1
    out = []
    for spec in header["tensors"]:
        count = int(np.prod(spec["shape"], dtype=np.int64))
        if offset + 8 * count > len(raw):
            raise InputError(f"{path}: payload truncated at tensor {spec['name']!r}")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(spec["shape"])
        offset += 8 * count
        out.append((spec["name"], arr.astype(np.dtype(spec["dtype"])), spec["tag"]))
    if offset != len(raw):
        raise InputError(f"{path}: payload size does not match header")
    return header, out


def save_model(model: Model, path) -> None:
    tensors = [(k, v, "backbone") for k, v in model.weights.items()]
    config = {"model": model.config.to_dict()}
    if model.head is not None:
        tensors += [(k, v, "head:" + model.head.kind) for k, v in model.head.named_params().items()]
        config["head"] = model.head.config()
    write_tensors(path, tensors, config)


def load_model(path) -> Model:
    header, tensors = read_tensors(path)
    cfg = ModelConfig(**header["config"]["model"])
    weights = {n: a.copy() for n, a, tag in tensors if tag == "backbone"}
    head = None
    if "head" in header["config"]:
        head = head_from_config(header["config"]["head"])
        params = {n: a.copy() for n, a, tag in tensors if tag.startswith("head:")}
        _assign_head(head, params)
    return Model(cfg, weights, head)


def _assign_head(head, params: dict, prefix: str = "") -> None:
    if head.kind == "mixture":
        for i, sub in enumerate(head.subheads):
            _assign_head(sub, params, f"{prefix}sub{i}.")
        return
    head.params = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix) and "." not in k[len(prefix):]}


def save_wfa(wfa: Wfa, path) -> None:
    write_tensors(path, [("alpha", wfa.alpha, "wfa"), ("transitions", wfa.transitions, "wfa")],
                  {"wfa": {"alphabet_size": wfa.alphabet_size, "dim": wfa.dim}})


def load_wfa(path) -> Wfa:
    _, tensors = read_tensors(path)
    t = {n: a for n, a, _ in tensors}
    return Wfa(t["alpha"], t["transitions"])


# ---------------------------------------------------------------- reports


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_report(obj, path) -> None:
    record = {"code_version": __version__, **to_jsonable(obj)}
    atomic_write(path, json.dumps(record, indent=2, sort_keys=True) + "\n")


def read_report(path) -> dict:
    return json.loads(Path(path).read_text())


def write_table(rows: list, path, header=("model", "seed", "length", "metric", "value")) -> None:
    """Comma-separated table with a header row; floats use ``repr`` so reruns compare bit-exactly."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    atomic_write(path, "\n".join(lines) + "\n")


# ----------------------------------------------------------------- config


def load_config(path) -> dict:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(str(path), f"not valid YAML ({exc})") from exc
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read ({exc.strerror})") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    return data


def apply_overrides(obj, overrides: dict, path: str):
    """Return a copy of dataclass ``obj`` with ``overrides`` applied, validating names and types."""
    if not isinstance(overrides, dict):
        raise ConfigError(path, "expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(obj)}
    values = dataclasses.asdict(obj)
    for key, val in overrides.items():
        if key not in fields:
            raise ConfigError(f"{path}.{key}", f"unknown field (valid: {', '.join(sorted(fields))})")
        current = values[key]
        if isinstance(current, bool) and not isinstance(val, bool):
            raise ConfigError(f"{path}.{key}", f"expected true/false, got {val!r}")
        if isinstance(current, (int, float)) and not isinstance(current, bool):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ConfigError(f"{path}.{key}", f"expected a number, got {val!r}")
            if isinstance(current, int) and not isinstance(val, int):
                raise ConfigError(f"{path}.{key}", f"expected an integer, got {val!r}")
        if isinstance(current, list) and not isinstance(val, list):
            raise ConfigError(f"{path}.{key}", f"expected a list, got {val!r}")
        values[key] = val
    try:
        return type(obj)(**values)
    except (InputError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc
