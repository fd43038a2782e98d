"""Binary PGM (P5) / PPM (P6) reading and writing, maxval 255.

Rasters are ``uint8`` arrays shaped ``(height, width, channels)`` with one
or three channels.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from palletmap.errors import ParseError, StructuralError


def check_raster(img: np.ndarray) -> np.ndarray:
    if img.dtype != np.uint8 or img.ndim != 3 or img.shape[2] not in (1, 3):
        raise StructuralError(f"raster must be uint8 (H, W, 1|3), got {img.dtype} {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise StructuralError("raster must not be empty")
    return img


def _tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out = []
    pos = 0
    while len(out) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError("truncated PNM header")
        out.append(data[start:pos])
    # exactly one whitespace byte separates the header from the samples
    return out, pos + 1


def decode_pnm(data: bytes) -> np.ndarray:
    tokens, offset = _tokens(data, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"unsupported PNM magic {magic!r}; only P5 and P6 are handled")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError("non-numeric PNM header") from None
    if maxval != 255:
        raise ParseError(f"only maxval 255 is supported, got {maxval}")
    channels = 1 if magic == b"P5" else 3
    n = width * height * channels
    body = data[offset : offset + n]
    if len(body) != n:
        raise ParseError(f"expected {n} sample bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels).copy()


def encode_pnm(img: np.ndarray) -> bytes:
    check_raster(img)
    h, w, c = img.shape
    magic = b"P5" if c == 1 else b"P6"
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(img).tobytes()


def read_pnm(path: Path | str) -> np.ndarray:
    return decode_pnm(Path(path).read_bytes())


def write_pnm(img: np.ndarray, path: Path | str) -> None:
    Path(path).write_bytes(encode_pnm(img))
