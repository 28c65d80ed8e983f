"""Versioned binary checkpoint holding the MLP, tree expression, and frame.

Byte layout (little-endian):

    magic    b"NHCK"
    version  uint32 (currently 1)
    expr     uint32 length + utf-8 expression string
    frame    4 float64: scale, offset_x, offset_y, offset_z
    config   uint32 length + utf-8 canonical JSON (sorted keys)
    nlayers  uint32
    layer*   uint32 fan_in, uint32 fan_out,
             fan_in*fan_out float64 row-major weights, fan_out float64 biases

Float64 parameters are stored verbatim, so a load/save round trip
reproduces forward values bit-identically.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from .brep_io import SimilarityTransform
from .errors import CheckpointError
from .field import NeuralField

MAGIC = b"NHCK"
VERSION = 1


@dataclass
class FieldCheckpoint:
    field: NeuralField
    expression: str
    transform: SimilarityTransform = dc_field(default_factory=SimilarityTransform)
    config: dict = dc_field(default_factory=dict)


def save_checkpoint(path, ckpt: FieldCheckpoint) -> None:
    expr = ckpt.expression.encode("utf-8")
    cfg = json.dumps(ckpt.config, sort_keys=True).encode("utf-8")
    t = ckpt.transform
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(expr)))
        f.write(expr)
        f.write(struct.pack("<4d", t.scale, t.offset[0], t.offset[1], t.offset[2]))
        f.write(struct.pack("<I", len(cfg)))
        f.write(cfg)
        f.write(struct.pack("<I", len(ckpt.field.weights)))
        for w, b in zip(ckpt.field.weights, ckpt.field.biases):
            f.write(struct.pack("<II", w.shape[0], w.shape[1]))
            f.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path) -> FieldCheckpoint:
    with open(path, "rb") as f:
        def take(n):
            data = f.read(n)
            if len(data) != n:
                raise CheckpointError(f"{path}: truncated")
            return data

        if take(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic")
        (version,) = struct.unpack("<I", take(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (elen,) = struct.unpack("<I", take(4))
        expr = take(elen).decode("utf-8")
        scale, ox, oy, oz = struct.unpack("<4d", take(32))
        (clen,) = struct.unpack("<I", take(4))
        config = json.loads(take(clen).decode("utf-8")) if clen else {}
        (nlayers,) = struct.unpack("<I", take(4))
        ws, bs = [], []
        for _ in range(nlayers):
            fan_in, fan_out = struct.unpack("<II", take(8))
            ws.append(
                np.frombuffer(take(8 * fan_in * fan_out), dtype="<f8")
                .reshape(fan_in, fan_out)
                .copy()
            )
            bs.append(np.frombuffer(take(8 * fan_out), dtype="<f8").copy())
    return FieldCheckpoint(
        field=NeuralField(ws, bs),
        expression=expr,
        transform=SimilarityTransform(scale=scale, offset=np.array([ox, oy, oz])),
        config=config,
    )
