"""Binary checkpoint format.

Layout, all little-endian::

    b"MRE1"                      magic
    u32  version                 (1)
    str  family                  u32 length + utf-8 bytes
    u32  input_size
    u32  channel_scale numerator, u32 denominator
    u32  count, then count x u32 fc width
    u32  num_classes
    u32  in_channels
    str  region
    f64  base_lr, f64 momentum, f64 weight_decay
    u64  total_iterations, u64 iteration
    u32  buffer count, then per buffer:
         str name, u32 rank, rank x u32 extents, float32 data

Parameter buffers are named ``param/<name>`` and momentum buffers
``velocity/<name>``.
"""
from __future__ import annotations

import io
import struct
from fractions import Fraction
from pathlib import Path

import numpy as np

from .network import ArchSpec, SubNetwork
from .training import OptimizerState

MAGIC = b"MRE1"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    pass


def _str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def dumps(net: SubNetwork, opt: OptimizerState | None = None) -> bytes:
    if opt is None:
        opt = OptimizerState(0.0, 0, 0.0, 0.0)
    spec = net.spec
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<I", VERSION))
    out.write(_str(spec.family))
    out.write(struct.pack("<I", spec.input_size))
    out.write(struct.pack("<II", spec.channel_scale.numerator, spec.channel_scale.denominator))
    out.write(struct.pack("<I", len(spec.fc_widths)))
    out.write(struct.pack(f"<{len(spec.fc_widths)}I", *spec.fc_widths))
    out.write(struct.pack("<II", spec.num_classes, spec.in_channels))
    out.write(_str(net.region))
    out.write(struct.pack("<ddd", opt.base_lr, opt.momentum, opt.weight_decay))
    out.write(struct.pack("<QQ", opt.total_iterations, opt.iteration))
    buffers = [(f"param/{k}", v) for k, v in net.params.items()]
    buffers += [(f"velocity/{k}", v) for k, v in opt.velocity.items()]
    out.write(struct.pack("<I", len(buffers)))
    for name, arr in buffers:
        out.write(_str(name))
        out.write(struct.pack("<I", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayloadError(
                f"checkpoint truncated: need {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))

    def str(self) -> str:
        (n,) = self.unpack("I")
        return self.take(n).decode("utf-8")


def loads(data: bytes) -> tuple[SubNetwork, OptimizerState]:
    r = _Reader(data)
    magic = r.take(4) if len(data) >= 4 else data
    if magic != MAGIC:
        raise BadMagicError(f"not a checkpoint: magic {magic!r} != {MAGIC!r}")
    (version,) = r.unpack("I")
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this reader supports {VERSION}")
    family = r.str()
    (input_size,) = r.unpack("I")
    num, den = r.unpack("II")
    (nfc,) = r.unpack("I")
    fc = r.unpack(f"{nfc}I")
    num_classes, in_channels = r.unpack("II")
    region = r.str()
    base_lr, momentum, weight_decay = r.unpack("ddd")
    total, iteration = r.unpack("QQ")
    spec = ArchSpec(family, input_size, Fraction(num, den), tuple(fc), num_classes, in_channels)
    shapes = spec.param_shapes()
    (count,) = r.unpack("I")
    params, velocity = {}, {}
    for _ in range(count):
        name = r.str()
        (rank,) = r.unpack("I")
        extents = r.unpack(f"{rank}I")
        size = int(np.prod(extents)) if rank else 1
        arr = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32).reshape(extents)
        kind, _, pname = name.partition("/")
        if pname not in shapes:
            raise ShapeMismatchError(f"buffer {name!r} does not belong to this architecture")
        if tuple(extents) != shapes[pname]:
            raise ShapeMismatchError(f"buffer {name!r} has shape {extents}, expected {shapes[pname]}")
        if kind == "param":
            params[pname] = arr
        elif kind == "velocity":
            velocity[pname] = arr
        else:
            raise CheckpointError(f"unknown buffer kind in {name!r}")
    if r.pos != len(data):
        raise CheckpointError(f"{len(data) - r.pos} trailing bytes after payload")
    if set(params) != set(shapes):
        raise ShapeMismatchError(f"missing parameters: {sorted(set(shapes) - set(params))[:5]}")
    net = SubNetwork(spec, region, params)
    opt = OptimizerState(base_lr, total, momentum, weight_decay, iteration, velocity)
    return net, opt


def save_checkpoint(net: SubNetwork, opt: OptimizerState | None, path) -> None:
    Path(path).write_bytes(dumps(net, opt))


def load_checkpoint(path) -> tuple[SubNetwork, OptimizerState]:
    return loads(Path(path).read_bytes())
