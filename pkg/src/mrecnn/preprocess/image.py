"""8-bit image buffers and binary PGM/PPM files."""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """8-bit image stored as an (height, width, channels) uint8 array."""
    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"pixels must be H x W x {{1,3}}, got {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image extents must be positive")
        if px.dtype != np.uint8:
            raise TypeError(f"pixels must be uint8, got {px.dtype}")
        object.__setattr__(self, "pixels", np.ascontiguousarray(px))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def __eq__(self, other):
        return isinstance(other, ImageBuffer) and np.array_equal(self.pixels, other.pixels)

    def hflip(self) -> "ImageBuffer":
        return ImageBuffer(self.pixels[:, ::-1])


_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def decode_pnm(data: bytes) -> ImageBuffer:
    """Decode binary (P5/P6) or plain (P2/P3) netpbm data with maxval <= 255."""
    fields, pos = [], 0
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ValueError("truncated PNM header")
        fields.append(m.group(1))
        pos = m.end()
    magic = fields[0]
    if magic not in (b"P2", b"P3", b"P5", b"P6"):
        raise ValueError(f"unsupported PNM magic {magic!r}")
    width, height, maxval = (int(f) for f in fields[1:])
    if not 0 < maxval <= 255:
        raise ValueError(f"only 8-bit PNM supported, maxval {maxval}")
    channels = 3 if magic in (b"P3", b"P6") else 1
    count = width * height * channels
    if magic in (b"P5", b"P6"):
        raw = data[pos + 1:pos + 1 + count]
        if len(raw) != count:
            raise ValueError(f"PNM payload has {len(raw)} bytes, expected {count}")
        px = np.frombuffer(raw, dtype=np.uint8)
    else:
        px = np.array(data[pos:].split()[:count], dtype=np.int64)
        if px.size != count:
            raise ValueError(f"PNM payload has {px.size} samples, expected {count}")
    if maxval != 255:
        px = np.round(px.astype(np.float64) * 255 / maxval)
    return ImageBuffer(px.astype(np.uint8).reshape(height, width, channels))


def encode_pnm(img: ImageBuffer) -> bytes:
    magic = b"P6" if img.channels == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (img.width, img.height)
    return header + img.pixels.tobytes()


def read_image(path) -> ImageBuffer:
    return decode_pnm(Path(path).read_bytes())


def write_image(img: ImageBuffer, path) -> None:
    Path(path).write_bytes(encode_pnm(img))


def image_suffix(img: ImageBuffer) -> str:
    return ".ppm" if img.channels == 3 else ".pgm"
