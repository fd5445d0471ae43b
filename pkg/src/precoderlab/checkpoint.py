"""Checkpoint container for trained models.

Layout: the magic bytes ``PRECODERLAB-CKPT1``, a little-endian uint32
header length, a UTF-8 JSON header, then every segment listed in the
header as little-endian float64 values in row-major order.  Segments are
the named network parameters followed by the Adam moments ``adam.m`` and
``adam.v`` so training can resume exactly where it stopped.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gnn_digital import GnnArch
from .gnn_hybrid import HybridArch
from .tensor import ParamVector
from .training import AdamState, Model

MAGIC = b"PRECODERLAB-CKPT1"
_ADAM_SEGMENTS = ("adam.m", "adam.v")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: Model
    params: ParamVector
    adam: AdamState
    epoch: int = 0
    seed: int = 0
    snr_db: float = 10.0
    best_epoch: int = 0
    best_val_ratio: float = float("nan")
    config: dict = field(default_factory=dict)

    def header(self) -> dict:
        segments = [{"name": n, "shape": list(self.params[n].shape)} for n in self.params.names]
        segments += [{"name": n, "shape": [self.params.size]} for n in _ADAM_SEGMENTS]
        return {
            "task": self.model.task,
            "kind": self.model.kind,
            "arch": self.model.arch.to_dict(),
            "seed": self.seed,
            "snr_db": self.snr_db,
            "epoch": self.epoch,
            "best_epoch": self.best_epoch,
            "best_val_ratio": self.best_val_ratio if math.isfinite(self.best_val_ratio) else None,
            "adam": {
                "step": self.adam.step,
                "beta1": self.adam.beta1,
                "beta2": self.adam.beta2,
                "eps": self.adam.eps,
            },
            "config": self.config,
            "segments": segments,
        }


def _arch_from(kind: str, d: dict):
    return HybridArch(**d) if kind == "hybrid" else GnnArch(**d)


def save(ckpt: Checkpoint, path) -> None:
    blob = json.dumps(ckpt.header(), sort_keys=True).encode("utf-8")
    arrays = [ckpt.params[n] for n in ckpt.params.names] + [ckpt.adam.m, ckpt.adam.v]
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    if len(data) < pos + 4:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", data, pos)
    pos += 4
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header") from exc
    pos += hlen

    segments = {}
    for seg in header["segments"]:
        shape = tuple(seg["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        chunk = data[pos : pos + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"{path}: truncated segment {seg['name']}")
        segments[seg["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{path}: trailing bytes after segments")

    missing = [n for n in _ADAM_SEGMENTS if n not in segments]
    if missing:
        raise CheckpointError(f"{path}: missing segments {missing}")
    m, v = (segments.pop(n) for n in _ADAM_SEGMENTS)
    model = Model(header["task"], header["kind"], _arch_from(header["kind"], header["arch"]))
    params = ParamVector(segments)
    expected = model.init_params(0)
    if expected.names != params.names or any(expected[n].shape != params[n].shape for n in params.names):
        raise CheckpointError(f"{path}: parameter segments do not match the recorded architecture")
    a = header["adam"]
    adam = AdamState(m, v, a["step"], a["beta1"], a["beta2"], a["eps"])
    best = header.get("best_val_ratio")
    return Checkpoint(
        model,
        params,
        adam,
        epoch=header["epoch"],
        seed=header["seed"],
        snr_db=header["snr_db"],
        best_epoch=header.get("best_epoch", 0),
        best_val_ratio=float("nan") if best is None else best,
        config=header.get("config", {}),
    )
