"""Checkpoint format: a UTF-8 manifest plus a raw little-endian float64 blob.

Manifest lines:
    dancebeat-checkpoint 1
    config <key> <value>          (one per config field, echoed verbatim)
    tensor <name> <d1[,d2,...]> <byte offset>

The blob stores each tensor's values contiguously in manifest order, so a
round trip is bit-exact.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .align import ContextQueries
from .errors import ParseError
from .flowgen import TrainConfig, TrainedModel, init_model
from .pose import BeatGrid
from .tensor import Tensor

MAGIC = "dancebeat-checkpoint 1"


def _config_items(tc: TrainConfig) -> list[tuple[str, str]]:
    return [(k, repr(v)) for k, v in vars(tc).items()]


def save_model(model: TrainedModel, path) -> None:
    path = Path(path)
    records = model.all_tensors()
    records += [(f"bank.kernel_{s}", Tensor(k)) for s, k in enumerate(model.bank.kernels)]
    lines = [MAGIC]
    for k, v in _config_items(model.config):
        lines.append(f"config {k} {v}")
    blob = bytearray()
    for name, t in records:
        shape = ",".join(str(d) for d in t.data.shape) or "1"
        lines.append(f"tensor {name} {shape} {len(blob)}")
        blob.extend(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    path.with_suffix(".manifest").write_text("\n".join(lines) + "\n", encoding="utf-8")
    path.with_suffix(".bin").write_bytes(bytes(blob))


def load_model(path) -> TrainedModel:
    path = Path(path)
    manifest = path.with_suffix(".manifest").read_text(encoding="utf-8").splitlines()
    if not manifest or manifest[0] != MAGIC:
        raise ParseError(f"not a checkpoint manifest: {path}", line=1)
    blob = path.with_suffix(".bin").read_bytes()

    cfg: dict[str, object] = {}
    tensors: dict[str, np.ndarray] = {}
    for ln, line in enumerate(manifest[1:], start=2):
        if not line.strip():
            continue
        kind, rest = line.split(" ", 1)
        if kind == "config":
            key, val = rest.split(" ", 1)
            cfg[key] = eval(val, {"__builtins__": {}})  # values written via repr()
        elif kind == "tensor":
            name, shape_s, off_s = rest.rsplit(" ", 2)
            shape = tuple(int(d) for d in shape_s.split(","))
            count = int(np.prod(shape))
            off = int(off_s)
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
            tensors[name] = arr.copy()
        else:
            raise ParseError(f"unknown manifest record {kind!r}", line=ln)

    tc = TrainConfig(**cfg)
    # latent/conditioning dims are recoverable from the stored projections
    latent_dim = tensors["vf.lat_w"].shape[0]
    cond_dim = tensors["vf.cond_w"].shape[0]
    latent_len = tensors["align.queries"].shape[0]
    model = init_model(tc, latent_dim, latent_len, cond_dim)
    for name, t in model.all_tensors():
        if name not in tensors:
            raise ParseError(f"checkpoint missing tensor {name}")
        t.data = tensors[name].copy()
    for s in range(model.bank.scales):
        model.bank.kernels[s] = tensors[f"bank.kernel_{s}"].copy()
    return model
