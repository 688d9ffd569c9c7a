"""Binary checkpoint container for trained models.

Layout (all integers little-endian)::

    magic      8 bytes   b"HINATTN\\0"
    version    uint32    currently 1
    meta_len   uint64
    meta       meta_len bytes of UTF-8 JSON (sorted keys)
    n_tensors  uint32
    n_tensors records:
        name_len uint16, name (UTF-8)
        dtype    uint8   0 = float64, 1 = int64
        ndim     uint8, then ndim x uint64 shape
        data     row-major little-endian values

Files are byte-identical for identical models. Cross-endian loading is not
supported beyond what the explicit little-endian encoding gives for free.
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

MAGIC = b"HINATTN\x00"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}


class CheckpointError(ValueError):
    pass


def _write_tensor(buf, name: str, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    code = 1 if np.issubdtype(arr.dtype, np.integer) else 0
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<BB", code, arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


def encode(meta: dict, tensors: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    raw = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<Q", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        _write_tensor(buf, name, arr)
    return buf.getvalue()


def decode(data: bytes) -> tuple[dict, dict]:
    fh = io.BytesIO(data)
    if _read_exact(fh, 8) != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", _read_exact(fh, 4))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (n,) = struct.unpack("<Q", _read_exact(fh, 8))
    meta = json.loads(_read_exact(fh, n).decode("utf-8"))
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    tensors = {}
    for _ in range(count):
        (ln,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, ln).decode("utf-8")
        code, ndim = struct.unpack("<BB", _read_exact(fh, 2))
        if code not in _DTYPES:
            raise CheckpointError(f"unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        tensors[name] = np.frombuffer(_read_exact(fh, size), dtype=dt).reshape(shape).copy()
    if fh.read(1):
        raise CheckpointError("trailing bytes after last tensor")
    return meta, tensors


def atomic_write(path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model, path) -> None:
    meta = {
        "hyper": asdict(model.hyper), "config": asdict(model.config),
        "path_names": model.path_names, "target_ids": model.target_ids,
        "label_names": model.label_names, "log": model.log, "best_epoch": model.best_epoch,
        "param_names": model.params.names(),
    }
    tensors = {f"param/{k}": v for k, v in model.params.arrays.items()}
    tensors.update({"embeddings": model.embeddings, "gamma": model.gamma,
                    "path_embeddings": model.path_embeddings, "Y": model.Y})
    tensors.update({f"split/{k}": np.asarray(v, dtype=np.int64) for k, v in model.split.items()})
    atomic_write(path, encode(meta, tensors))


def load_model(path):
    from .model import HyperParams, ModelParams
    from .train import TrainConfig, TrainedModel

    meta, t = decode(Path(path).read_bytes())
    hp = HyperParams(**meta["hyper"])
    params = ModelParams({k: t[f"param/{k}"] for k in meta["param_names"]})
    params.check(hp)
    return TrainedModel(
        params=params, hyper=hp, embeddings=t["embeddings"], gamma=t["gamma"],
        path_embeddings=t["path_embeddings"], path_names=meta["path_names"],
        target_ids=meta["target_ids"], label_names=meta["label_names"], Y=t["Y"],
        split={k.split("/", 1)[1]: v for k, v in t.items() if k.startswith("split/")},
        config=TrainConfig(**meta["config"]), log=meta["log"], best_epoch=meta["best_epoch"])
