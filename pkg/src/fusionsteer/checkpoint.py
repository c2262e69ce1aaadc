"""Binary checkpoint format.

::

    b"SFCK"                 magic
    u16  version            (= 1)
    u32  header length
    header                  UTF-8 JSON: config, norm_stats, epoch, rng_state,
                            optimizer, tensors = [{name, dtype, rank, dims, offset}]
    payload                 little-endian tensors in directory order, offsets
                            relative to the payload start; dtype 0 = float32
    u32  CRC32              of every byte before it

All integers are little-endian.
"""
from __future__ import annotations

import json
import struct
import zlib
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import NormStats
from .models import FusionModel, ModelConfig
from .train import Adam

MAGIC = b"SFCK"
VERSION = 1
DTYPES = {0: np.dtype("<f4")}


class CheckpointError(Exception):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    params: "OrderedDict[str, np.ndarray]"
    norm_stats: NormStats | None = None
    epoch: int = 0
    rng_state: dict | None = None
    optimizer: dict | None = None  # hyperparameters and step count
    optimizer_tensors: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    @classmethod
    def from_model(cls, model: FusionModel, norm_stats=None, epoch=0, rng=None, opt: Adam | None = None):
        opt_tensors: OrderedDict[str, np.ndarray] = OrderedDict()
        if opt is not None:
            for k in opt.m:
                opt_tensors[f"adam.m.{k}"] = opt.m[k]
                opt_tensors[f"adam.v.{k}"] = opt.v[k]
        return cls(model.config, OrderedDict((k, v.copy()) for k, v in model.parameters().items()),
                   norm_stats, epoch, rng.bit_generator.state if rng is not None else None,
                   opt.state_dict() if opt is not None else None, opt_tensors)

    def build_model(self) -> FusionModel:
        model = FusionModel(self.config)
        model.load_parameters(self.params)
        return model

    def restore_optimizer(self, model: FusionModel) -> Adam | None:
        if self.optimizer is None:
            return None
        o = self.optimizer
        opt = Adam(model.parameters(), lr=o["lr"], beta1=o["beta1"], beta2=o["beta2"], eps=o["eps"])
        opt.t = int(o["t"])
        for k in opt.m:
            opt.m[k][...] = self.optimizer_tensors[f"adam.m.{k}"]
            opt.v[k][...] = self.optimizer_tensors[f"adam.v.{k}"]
        return opt

    def restore_rng(self) -> np.random.Generator | None:
        if self.rng_state is None:
            return None
        bg = np.random.PCG64()
        bg.state = self.rng_state
        return np.random.Generator(bg)


def to_bytes(ckpt: Checkpoint) -> bytes:
    tensors = list(ckpt.params.items()) + list(ckpt.optimizer_tensors.items())
    directory, chunks, offset = [], [], 0
    for name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype=DTYPES[0]).tobytes()
        directory.append({"name": name, "dtype": 0, "rank": int(arr.ndim), "dims": [int(d) for d in arr.shape],
                          "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = {
        "config": ckpt.config.to_dict(),
        "norm_stats": ckpt.norm_stats.to_dict() if ckpt.norm_stats is not None else None,
        "epoch": int(ckpt.epoch),
        "rng_state": ckpt.rng_state,
        "optimizer": ckpt.optimizer,
        "n_params": len(ckpt.params),
        "tensors": directory,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<HI", VERSION, len(hbytes)) + hbytes + b"".join(chunks)
    return body + struct.pack("<I", zlib.crc32(body))


def from_bytes(blob: bytes) -> Checkpoint:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad magic")
    if len(blob) < 14:
        raise CheckpointError("truncated checkpoint")
    (crc,) = struct.unpack("<I", blob[-4:])
    version, hlen = struct.unpack("<HI", blob[4:10])
    if version != VERSION:
        raise CheckpointError(f"unsupported version {version} (expected {VERSION})")
    if 10 + hlen > len(blob) - 4:
        raise CheckpointError("truncated checkpoint")
    if zlib.crc32(blob[:-4]) != crc:
        raise CheckpointError("checksum mismatch")
    try:
        header = json.loads(blob[10:10 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    payload = memoryview(blob)[10 + hlen:-4]
    tensors: OrderedDict[str, np.ndarray] = OrderedDict()
    for entry in header["tensors"]:
        dt = DTYPES.get(entry["dtype"])
        if dt is None:
            raise CheckpointError(f"unknown dtype code {entry['dtype']}")
        count = int(np.prod(entry["dims"])) if entry["rank"] else 1
        start, stop = entry["offset"], entry["offset"] + count * dt.itemsize
        if stop > len(payload):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(payload[start:stop], dtype=dt).astype(np.float32).reshape(entry["dims"])
        tensors[entry["name"]] = arr
    names = list(tensors)
    n_params = header["n_params"]
    return Checkpoint(
        config=ModelConfig.from_dict(header["config"]),
        params=OrderedDict((k, tensors[k]) for k in names[:n_params]),
        norm_stats=NormStats.from_dict(header["norm_stats"]) if header["norm_stats"] else None,
        epoch=header["epoch"],
        rng_state=header["rng_state"],
        optimizer=header["optimizer"],
        optimizer_tensors=OrderedDict((k, tensors[k]) for k in names[n_params:]),
    )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no checkpoint at {path}")
    return from_bytes(path.read_bytes())
