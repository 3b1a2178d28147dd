"""Binary PPM (P6, maxval 255) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DatasetError
from .tensors import ImageTensor

_WHITESPACE = b" \t\n\r\x0b\x0c"


def _header_tokens(buf, count, source):
    """Pull ``count`` whitespace-separated tokens, skipping ``#`` comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos] in _WHITESPACE:
            pos += 1
        if pos < len(buf) and buf[pos] == ord("#"):
            while pos < len(buf) and buf[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and buf[pos] not in _WHITESPACE and buf[pos] != ord("#"):
            pos += 1
        if start == pos:
            raise DatasetError(f"{source}: truncated PPM header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or buf[pos] not in _WHITESPACE:
        raise DatasetError(f"{source}: malformed PPM header")
    return tokens, pos + 1


def decode_ppm(buf, source="<bytes>"):
    if not buf.startswith(b"P6"):
        raise DatasetError(f"{source}: not a binary PPM (expected magic 'P6')")
    tokens, offset = _header_tokens(buf, 4, source)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DatasetError(f"{source}: non-integer PPM header field in {tokens[1:]!r}") from None
    if width < 1 or height < 1:
        raise DatasetError(f"{source}: invalid PPM size {width}x{height}")
    if maxval != 255:
        raise DatasetError(f"{source}: unsupported maxval {maxval} (only 255)")
    expected = width * height * 3
    raster = buf[offset : offset + expected]
    if len(raster) != expected:
        raise DatasetError(f"{source}: expected {expected} raster bytes, found {len(raster)}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return ImageTensor(pixels / 255.0)


def read_ppm(path):
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read image {path}: {exc}") from exc
    return decode_ppm(buf, str(path))


def quantize(values):
    """Map [0, 1] reals to bytes, rounding halves away from zero."""
    scaled = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def encode_ppm(image):
    if image.channels != 3:
        raise DatasetError(f"PPM needs 3 channels, image has {image.channels}")
    header = f"P6\n{image.width} {image.height}\n255\n".encode("ascii")
    return header + quantize(image.data).tobytes()


def write_ppm(path, image):
    Path(path).write_bytes(encode_ppm(image))
