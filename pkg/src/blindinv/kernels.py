"""Hot convolution kernels with backend selection.

``correlate2d`` and ``filter_grad`` are the inner loops of every forward
and backward pass through a convolutional layer.  At import time this
module picks the compiled extension (``blindinv._convkern``) when it is
available and not disabled via ``BLINDINV_PURE=1``, else a vectorised
numpy fallback.  Both backends implement the identical contract:

    correlate2d(x[B,C,H,W], f[O,C,kh,kw], ah, aw) -> [B,O,H,W]
        out[b,o,i,j] = sum_{c,p,q} x[b,c,i+p-ah,j+q-aw] * f[o,c,p,q]
        with zero padding outside bounds (output keeps H x W).

    filter_grad(x[B,C,H,W], g[B,O,H,W], kh, kw, ah, aw) -> [O,C,kh,kw]
        df[o,c,p,q] = sum_{b,i,j} g[b,o,i,j] * x[b,c,i+p-ah,j+q-aw]

The input-gradient of a correlation is itself a correlation with the
channel-swapped, spatially flipped filter bank and the mirrored anchor;
``input_grad`` performs that reduction so both backends share it.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    from . import _convkern
except ImportError:
    _convkern = None

_FORCE_PURE = os.environ.get("BLINDINV_PURE", "") in ("1", "true", "yes")
_COMPILED = _convkern is not None and not _FORCE_PURE


def backend() -> str:
    """Name of the active backend: 'compiled' or 'numpy'."""
    return "compiled" if _COMPILED else "numpy"


def _pad(x: np.ndarray, kh: int, kw: int, ah: int, aw: int) -> np.ndarray:
    B, C, H, W = x.shape
    xp = np.zeros((B, C, H + kh - 1, W + kw - 1), dtype=np.float64)
    xp[:, :, ah : ah + H, aw : aw + W] = x
    return xp


def _correlate2d_numpy(x, f, ah, aw):
    kh, kw = f.shape[2], f.shape[3]
    xp = _pad(x, kh, kw, ah, aw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # [B,C,H,W,kh,kw]
    out = np.tensordot(win, f, axes=([1, 4, 5], [1, 2, 3]))  # [B,H,W,O]
    return np.ascontiguousarray(np.moveaxis(out, 3, 1))


def _filter_grad_numpy(x, g, kh, kw, ah, aw):
    H, W = x.shape[2], x.shape[3]
    xp = _pad(x, kh, kw, ah, aw)
    win = sliding_window_view(xp, (H, W), axis=(2, 3))  # [B,C,kh,kw,H,W]
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 4, 5]))  # [O,C,kh,kw]


def correlate2d(x: np.ndarray, f: np.ndarray, ah: int, aw: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    f = np.ascontiguousarray(f, dtype=np.float64)
    if _COMPILED:
        return _convkern.correlate2d(x, f, ah, aw)
    return _correlate2d_numpy(x, f, ah, aw)


def filter_grad(
    x: np.ndarray, g: np.ndarray, kh: int, kw: int, ah: int, aw: int
) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    if _COMPILED:
        return _convkern.filter_grad(x, g, kh, kw, ah, aw)
    return _filter_grad_numpy(x, g, kh, kw, ah, aw)


def input_grad(g: np.ndarray, f: np.ndarray, ah: int, aw: int) -> np.ndarray:
    """dx for a correlation: correlate the output adjoint with the
    transposed, flipped filters at the mirrored anchor."""
    kh, kw = f.shape[2], f.shape[3]
    ft = np.ascontiguousarray(f.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    return correlate2d(g, ft, kh - 1 - ah, kw - 1 - aw)


def correlate2d_reference(x, f, ah, aw):
    """Slow loop implementation kept as an oracle for backend tests."""
    B, C, H, W = x.shape
    O, _, kh, kw = f.shape
    out = np.zeros((B, O, H, W))
    for b in range(B):
        for o in range(O):
            for i in range(H):
                for j in range(W):
                    acc = 0.0
                    for c in range(C):
                        for p in range(kh):
                            for q in range(kw):
                                ii, jj = i + p - ah, j + q - aw
                                if 0 <= ii < H and 0 <= jj < W:
                                    acc += x[b, c, ii, jj] * f[o, c, p, q]
                    out[b, o, i, j] = acc
    return out
