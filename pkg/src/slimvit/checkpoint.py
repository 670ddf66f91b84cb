"""Versioned binary checkpoint container.

Layout: magic ``SCLC`` | version u32 LE | header-length u64 LE | UTF-8 JSON
header | raw tensor payload. Tensors are float32 little-endian, stored in
lexicographic name order at ascending non-overlapping offsets; the header
records the model config, the verbatim train config and its hash, the epoch,
optimizer step, and RNG state, so ``load(save(x))`` round-trips bit-identically
and a resumed run continues exactly where the original stopped.

Writes land in a temp file and are atomically renamed; an interrupted run
never leaves a corrupt checkpoint behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .model import ModelConfig, Param, ParamStore, parameter_specs
from .slicing import ValidationError
from . import tensor as T

MAGIC = b"SCLC"
VERSION = 1

PARAM_PREFIX = "param/"
MOMENT_M_PREFIX = "opt/m/"
MOMENT_V_PREFIX = "opt/v/"


def config_hash(train_config_dict: dict) -> str:
    canon = json.dumps(train_config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class Checkpoint:
    model: ModelConfig
    tensors: dict[str, np.ndarray]
    epoch: int = 0
    opt_step: int = 0
    rng_state: dict | None = None
    train: dict | None = None

    def param_arrays(self) -> dict[str, np.ndarray]:
        n = len(PARAM_PREFIX)
        return {k[n:]: v for k, v in self.tensors.items() if k.startswith(PARAM_PREFIX)}

    def moment_arrays(self) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        m = {k[len(MOMENT_M_PREFIX):]: v for k, v in self.tensors.items()
             if k.startswith(MOMENT_M_PREFIX)}
        v = {k[len(MOMENT_V_PREFIX):]: v_ for k, v_ in self.tensors.items()
             if k.startswith(MOMENT_V_PREFIX)}
        return m, v


def tensors_from_state(store: ParamStore, opt=None) -> dict[str, np.ndarray]:
    tensors = {PARAM_PREFIX + name: p.tensor.data for name, p in store.items()}
    if opt is not None:
        for name, (m, v) in opt.moments.items():
            tensors[MOMENT_M_PREFIX + name] = m
            tensors[MOMENT_V_PREFIX + name] = v
    return tensors


def store_from_checkpoint(ckpt: Checkpoint, dtype=np.float32,
                          requires_grad: bool = True) -> ParamStore:
    """Rebuild a ParamStore; axis roles come from the model config's spec table."""
    specs = parameter_specs(ckpt.model)
    arrays = ckpt.param_arrays()
    missing = set(specs) - set(arrays)
    if missing:
        raise ValidationError(f"checkpoint is missing parameters: {sorted(missing)[:5]}")
    params = {}
    for name, (shape, roles, _) in specs.items():
        data = arrays[name]
        if tuple(data.shape) != tuple(shape):
            raise ValidationError(
                f"checkpoint tensor {name} has shape {data.shape}, config implies {shape}")
        params[name] = Param(T.Tensor(data.astype(dtype), requires_grad=requires_grad),
                             tuple(roles))
    return ParamStore(params, dtype)


def save(path: str, ckpt: Checkpoint):
    directory = []
    payload = bytearray()
    for name in sorted(ckpt.tensors):
        arr = np.ascontiguousarray(ckpt.tensors[name], dtype="<f4")
        raw = arr.tobytes()
        directory.append({
            "name": name,
            "dtype": "f32",
            "shape": list(arr.shape),
            "offset": len(payload),
            "length": len(raw),
        })
        payload.extend(raw)
    header = {
        "model": ckpt.model.to_dict(),
        "train": ckpt.train,
        "train_hash": config_hash(ckpt.train) if ckpt.train is not None else "",
        "epoch": ckpt.epoch,
        "opt_step": ckpt.opt_step,
        "rng": ckpt.rng_state,
        "tensors": directory,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(bytes(payload))
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def load(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ValidationError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        version_raw = f.read(4)
        length_raw = f.read(8)
        if len(version_raw) != 4 or len(length_raw) != 8:
            raise ValidationError(f"{path}: truncated preamble")
        version = struct.unpack("<I", version_raw)[0]
        if version != VERSION:
            raise ValidationError(f"{path}: unsupported version {version}")
        header_len = struct.unpack("<Q", length_raw)[0]
        header_bytes = f.read(header_len)
        if len(header_bytes) != header_len:
            raise ValidationError(f"{path}: truncated header")
        header = json.loads(header_bytes.decode())
        payload = f.read()

    model = ModelConfig.from_dict(header["model"])
    tensors = {}
    prev_end = 0
    for entry in header["tensors"]:
        name, offset, length = entry["name"], entry["offset"], entry["length"]
        shape = tuple(entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if entry["dtype"] != "f32":
            raise ValidationError(f"{path}: tensor {name} has unsupported dtype {entry['dtype']}")
        if length != expected:
            raise ValidationError(
                f"{path}: tensor {name} declares {length} bytes, shape implies {expected}")
        if offset < prev_end:
            raise ValidationError(f"{path}: tensor {name} overlaps the previous entry")
        if offset + length > len(payload):
            raise ValidationError(f"{path}: tensor {name} extends past end of payload")
        prev_end = offset + length
        tensors[name] = np.frombuffer(
            payload, dtype="<f4", count=length // 4, offset=offset).reshape(shape).copy()
    return Checkpoint(
        model=model,
        tensors=tensors,
        epoch=header["epoch"],
        opt_step=header["opt_step"],
        rng_state=header["rng"],
        train=header["train"],
    )


def rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    bitgen_name = state["bit_generator"]
    bitgen = getattr(np.random, bitgen_name)()
    bitgen.state = state
    return np.random.Generator(bitgen)
