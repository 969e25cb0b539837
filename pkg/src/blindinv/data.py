"""Dataset I/O: IDX image archives, binary PGM images, and a synthetic
bar-image distribution for self-contained demos and tests."""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .measurement import apply_kernel, gaussian_kernel
from .rng import Pcg32

IDX_IMAGE_MAGIC = 0x00000803


def load_idx(path, downsample_16: bool = False) -> np.ndarray:
    """Read an IDX image archive into a float [n,1,H,W] array in [-1,1]
    (byte 0 -> -1.0, byte 255 -> +1.0).

    With ``downsample_16``, 28x28 images are reduced to 16x16: two
    overlapping 2x2 mean-pool passes (28 -> 27 -> 26) followed by a
    central crop to 16.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise FormatError(f"IDX file too short: {len(blob)} bytes")
    magic, n, rows, cols = struct.unpack(">IIII", blob[:16])
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(
            f"bad IDX magic 0x{magic:08x}, expected 0x{IDX_IMAGE_MAGIC:08x}"
        )
    expected = 16 + n * rows * cols
    if len(blob) != expected:
        raise FormatError(
            f"IDX payload mismatch: header promises {n} items "
            f"({expected} bytes), file has {len(blob)} bytes"
        )
    raw = np.frombuffer(blob, np.uint8, n * rows * cols, 16)
    images = raw.reshape(n, rows, cols).astype(np.float64) / 127.5 - 1.0
    if downsample_16:
        if (rows, cols) != (28, 28):
            raise FormatError(
                f"downsample_16 expects 28x28 images, got {rows}x{cols}"
            )
        images = _pool_stride1(_pool_stride1(images))  # 28 -> 27 -> 26
        images = images[:, 5:21, 5:21]
    return np.ascontiguousarray(images[:, None])


def _pool_stride1(x: np.ndarray) -> np.ndarray:
    return 0.25 * (x[:, :-1, :-1] + x[:, :-1, 1:] + x[:, 1:, :-1] + x[:, 1:, 1:])


def write_idx(path, images: np.ndarray) -> None:
    """Inverse of load_idx for fixtures: floats in [-1,1] are quantized to
    bytes."""
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim == 4:
        if imgs.shape[1] != 1:
            raise FormatError("IDX archives hold single-channel images")
        imgs = imgs[:, 0]
    n, rows, cols = imgs.shape
    quant = _quantize(imgs)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(quant.tobytes())


def _quantize(values: np.ndarray) -> np.ndarray:
    """[-1,1] floats to bytes with round-half-up, clipping first."""
    v = np.clip(values, -1.0, 1.0)
    return np.floor((v + 1.0) * 127.5 + 0.5).clip(0, 255).astype(np.uint8)


def save_pgm(path, image: np.ndarray) -> None:
    """Binary PGM (P5, maxval 255); input is a [-1,1] image, [H,W] or
    [1,H,W]."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    if img.ndim != 2:
        raise FormatError(f"PGM wants a single-channel image, got shape {image.shape}")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(_quantize(img).tobytes())


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(blob[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise FormatError(f"expected binary PGM magic P5, got {tokens[0]!r}")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    if len(blob) - pos != w * h:
        raise FormatError(
            f"PGM payload mismatch: expected {w * h} bytes, found {len(blob) - pos}"
        )
    raw = np.frombuffer(blob, np.uint8, w * h, pos)
    return raw.reshape(h, w).astype(np.float64) / 127.5 - 1.0


# ---------------------------------------------------------------------------
# Synthetic demo distribution
# ---------------------------------------------------------------------------

_SMOOTH = gaussian_kernel(3, 0.55)


def synthetic_bars(n: int, rng: Pcg32, size: int = 16) -> np.ndarray:
    """Bright softened bars on a dark background, [n,1,size,size] in
    [-1,1].

    Each image has one horizontal or vertical bar with random position,
    thickness and intensity; the sharp edges make blurring visibly
    destructive, which the deblurring demos rely on.
    """
    out = np.empty((n, 1, size, size))
    for i in range(n):
        img = np.full((size, size), -0.95)
        horizontal = rng.below(2) == 0
        thickness = 2 + rng.below(2)
        pos = 2 + rng.below(size - 4 - thickness)
        amp = 0.15 + 0.8 * rng.random(1)[0]
        if horizontal:
            img[pos : pos + thickness, 2 : size - 2] = amp
        else:
            img[2 : size - 2, pos : pos + thickness] = amp
        img = apply_kernel(img, _SMOOTH)
        out[i, 0] = np.clip(img, -1.0, 1.0)
    return out
