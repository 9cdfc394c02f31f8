"""Versioned binary checkpoints: named parameters + config + vocabulary hashes.

File layout (little-endian throughout):

    magic   8 bytes  b"CSTCK001"
    hlen    uint32   byte length of the JSON header
    header  hlen bytes of UTF-8 JSON:
        {"format_version": 1, "kind": ..., "step": ...,
         "config": {...}, "vocab": {...},
         "params": [{"name": ..., "shape": [...], "dtype": "float32"}, ...]}
    data    raw parameter values, row-major, in header order

Loading into a model refuses config or vocabulary mismatches and names the
offending field, so a checkpoint can never silently deform a model.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import ASRModel, JointModel, MTModel, TransformerConfig

MAGIC = b"CSTCK001"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str  # asr | mt | joint
    config: dict  # model config dict (joint: {"asr": ..., "mt": ..., "lam": ...})
    params: dict[str, np.ndarray]
    vocab_hashes: dict[str, str]
    step: int = 0


def model_config_dict(model) -> dict:
    if model.kind == "joint":
        return {"asr": model.asr.config.to_dict(),
                "mt": model.mt.config.to_dict(),
                "lam": model.lam}
    return model.config.to_dict()


def checkpoint_from_model(model, step: int = 0) -> Checkpoint:
    params = {name: t.data.copy() for name, t in model.params.items()}
    return Checkpoint(kind=model.kind, config=model_config_dict(model),
                      params=params, vocab_hashes=dict(model.vocab_hashes), step=step)


def build_model(kind: str, config: dict, seed: int = 0):
    """Fresh (randomly initialized) model matching a checkpoint header."""
    if kind == "asr":
        return ASRModel(TransformerConfig.from_dict(config), seed=seed)
    if kind == "mt":
        return MTModel(TransformerConfig.from_dict(config), seed=seed)
    if kind == "joint":
        asr = ASRModel(TransformerConfig.from_dict(config["asr"]), seed=seed)
        mt = MTModel(TransformerConfig.from_dict(config["mt"]), seed=seed + 1)
        return JointModel(asr, mt, lam=config["lam"])
    raise CheckpointError(f"unknown model kind {kind!r}")


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    entries = [{"name": name, "shape": list(arr.shape), "dtype": "float32"}
               for name, arr in ckpt.params.items()]
    header = {
        "format_version": FORMAT_VERSION,
        "kind": ckpt.kind,
        "step": ckpt.step,
        "config": ckpt.config,
        "vocab": ckpt.vocab_hashes,
        "params": entries,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in ckpt.params:
            f.write(ckpt.params[name].astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format version {header['format_version']}")
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 4)
            if len(raw) != count * 4:
                raise CheckpointError(f"{path}: truncated data for parameter {entry['name']}")
            params[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return Checkpoint(kind=header["kind"], config=header["config"], params=params,
                      vocab_hashes=header["vocab"], step=header["step"])


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _check_compatible(expected_kind: str, expected_config: dict,
                      expected_vocab: dict, ckpt: Checkpoint) -> None:
    if ckpt.kind != expected_kind:
        raise CheckpointError(f"model kind mismatch: checkpoint is {ckpt.kind!r}, "
                              f"model is {expected_kind!r}")
    want = _flatten(expected_config)
    got = _flatten(ckpt.config)
    for key in sorted(set(want) | set(got)):
        if want.get(key) != got.get(key):
            raise CheckpointError(
                f"config mismatch in field {key!r}: model has {want.get(key)!r}, "
                f"checkpoint has {got.get(key)!r}")
    for key in sorted(set(expected_vocab) | set(ckpt.vocab_hashes)):
        if expected_vocab.get(key) != ckpt.vocab_hashes.get(key):
            raise CheckpointError(f"vocabulary mismatch for {key!r}")


def load_into(model, ckpt: Checkpoint) -> None:
    """Copy checkpoint parameters into a model; reject any mismatch."""
    _check_compatible(model.kind, model_config_dict(model), model.vocab_hashes, ckpt)
    missing = set(model.params) - set(ckpt.params)
    extra = set(ckpt.params) - set(model.params)
    if missing or extra:
        raise CheckpointError(f"parameter name mismatch: missing {sorted(missing)}, "
                              f"extra {sorted(extra)}")
    for name, tensor in model.params.items():
        arr = ckpt.params[name]
        if arr.shape != tensor.shape:
            raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {tensor.shape}")
        tensor.data = arr.astype(tensor.dtype)
        tensor.zero_grad()


def restore_model(ckpt: Checkpoint, seed: int = 0):
    model = build_model(ckpt.kind, ckpt.config, seed=seed)
    model.vocab_hashes = dict(ckpt.vocab_hashes)
    load_into(model, ckpt)
    return model


def average_checkpoints(checkpoints: list[Checkpoint]) -> Checkpoint:
    """Arithmetic mean of every parameter tensor across checkpoints."""
    if not checkpoints:
        raise CheckpointError("need at least one checkpoint to average")
    first = checkpoints[0]
    for other in checkpoints[1:]:
        _check_compatible(first.kind, first.config, first.vocab_hashes, other)
        if set(other.params) != set(first.params):
            raise CheckpointError("parameter name sets differ across checkpoints")
    avg = {}
    for name, arr in first.params.items():
        stacked = np.stack([c.params[name] for c in checkpoints])
        avg[name] = stacked.mean(axis=0).astype(arr.dtype)
    return Checkpoint(kind=first.kind, config=first.config, params=avg,
                      vocab_hashes=first.vocab_hashes,
                      step=max(c.step for c in checkpoints))
