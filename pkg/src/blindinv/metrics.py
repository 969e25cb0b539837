"""Recovery quality metrics and source matching."""

from __future__ import annotations

from itertools import permutations

import numpy as np

PSNR_CAP_DB = 99.0


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.mean((a - b) ** 2))


def mean_abs(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b))))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 2.0) -> float:
    """10 log10(peak^2 / mse) in dB, capped at 99 (equal inputs hit the
    cap).  peak defaults to the [-1,1] dynamic range."""
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(peak * peak / err)))


def normalize_intensity(x: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance copy; flat inputs map to zeros."""
    x = np.asarray(x, dtype=np.float64)
    centered = x - x.mean()
    std = centered.std()
    if std < 1e-12:
        return np.zeros_like(x)
    return centered / std


def match_sources(est, truth) -> tuple[tuple, list[float]]:
    """Best assignment of estimated sources to true sources.

    Both inputs hold S sources; each is intensity normalized, then the
    permutation minimizing total MSE is searched exhaustively (S <= 5).
    Returns (perm, scores) where est[perm[i]] pairs with truth[i] and
    scores[i] is that pair's normalized MSE.
    """
    est = [normalize_intensity(e) for e in est]
    truth = [normalize_intensity(t) for t in truth]
    s = len(truth)
    if len(est) != s:
        raise ValueError(f"source counts differ: {len(est)} vs {s}")
    if s > 5:
        raise ValueError(f"permutation search supports at most 5 sources, got {s}")
    cost = np.array([[mse(e, t) for e in est] for t in truth])
    best_perm, best_total = None, np.inf
    for perm in permutations(range(s)):
        total = sum(cost[i, perm[i]] for i in range(s))
        if total < best_total:
            best_total, best_perm = total, perm
    scores = [cost[i, best_perm[i]] for i in range(s)]
    return best_perm, scores


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized cross-correlation (cosine similarity) of two arrays."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0.0:
        return 0.0
    return float(np.dot(a, b) / denom)


def embed_center(small: np.ndarray, shape) -> np.ndarray:
    """Zero-pad a 2-D array into ``shape`` with centers aligned."""
    small = np.asarray(small, dtype=np.float64)
    out = np.zeros(shape)
    r = (shape[0] - small.shape[0]) // 2
    c = (shape[1] - small.shape[1]) // 2
    if r < 0 or c < 0:
        raise ValueError(f"target {shape} smaller than array {small.shape}")
    out[r : r + small.shape[0], c : c + small.shape[1]] = small
    return out


def kernel_similarity(estimate: np.ndarray, truth: np.ndarray) -> float:
    """NCC between two kernels after center-aligning the smaller one."""
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    rows = max(estimate.shape[0], truth.shape[0])
    cols = max(estimate.shape[1], truth.shape[1])
    return ncc(embed_center(estimate, (rows, cols)), embed_center(truth, (rows, cols)))
