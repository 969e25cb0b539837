"""Ground-truth measurement processes used to synthesize observations.

Two families: same-size convolutional filtering (blur / edge extraction)
and nonlinear mixing |M^T X| of several sources into one or more
observation rows.  Everything here exists only to create data and to feed
the known-operator baseline; the solver itself never sees these objects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import FormatError, ShapeMismatchError
from .rng import Pcg32


@dataclass(frozen=True)
class ConvKernel:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ShapeMismatchError(f"kernel must be 2-D, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("kernel has non-finite entries")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class MixingMatrix:
    """Columns mix the S sources into each observation row: values is
    [S, n_obs] and a mixture is |values.T @ X|."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeMismatchError(f"mixing matrix must be 2-D, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("mixing matrix has non-finite entries")
        object.__setattr__(self, "values", v)


def gaussian_kernel(size: int = 20, sigma: float = 5.0) -> ConvKernel:
    """Isotropic Gaussian taps on a size x size grid, normalized to sum 1.

    The grid center is (size-1)/2, so even sizes center between cells.
    """
    c = (size - 1) / 2.0
    idx = np.arange(size) - c
    g = np.exp(-(idx[:, None] ** 2 + idx[None, :] ** 2) / (2.0 * sigma**2))
    return ConvKernel(g / g.sum())


def edge_kernel() -> ConvKernel:
    """Horizontal-gradient (Sobel) edge filter."""
    return ConvKernel(
        np.array([[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]])
    )


def apply_kernel(image: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Same-size correlation of each channel with the kernel, zero padded,
    anchored at (kh//2, kw//2)."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    if img.ndim != 3:
        raise ShapeMismatchError(f"image must be [H,W] or [C,H,W], got {image.shape}")
    k = kernel.values
    out = kernels.correlate2d(img[:, None], k[None, None], k.shape[0] // 2, k.shape[1] // 2)
    out = out[:, 0]
    return out[0] if squeeze else out


def toeplitz_of(
    kernel: ConvKernel, height: int, width: int, circular: bool = False
) -> np.ndarray:
    """Dense [H*W, H*W] matrix T with T @ vec(image) == vec(apply_kernel).

    Rows index output pixels in row-major order.  The default zero-padded
    form matches :func:`apply_kernel` exactly; ``circular=True`` builds
    the wrap-around (circulant) form instead, which is what the
    frequency-domain deconvolution baseline inverts.  Rank deficiency is
    allowed either way; note that zero padding restores full rank for
    zero-sum filters (border rows see truncated taps), while the circulant
    form of such filters annihilates constants exactly.
    """
    k = kernel.values
    kh, kw = k.shape
    ah, aw = kh // 2, kw // 2
    t = np.zeros((height * width, height * width))
    for i in range(height):
        for j in range(width):
            row = i * width + j
            for p in range(kh):
                m = i + p - ah
                if circular:
                    m %= height
                elif m < 0 or m >= height:
                    continue
                for q in range(kw):
                    n = j + q - aw
                    if circular:
                        n %= width
                    elif n < 0 or n >= width:
                        continue
                    t[row, m * width + n] += k[p, q]
    return t


def mix_abs(m: MixingMatrix, x: np.ndarray) -> np.ndarray:
    """Nonlinear mixture |M^T X| of S row-sources into n_obs rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != m.values.shape[0]:
        raise ShapeMismatchError(
            f"sources {x.shape} do not match mixing matrix {m.values.shape}"
        )
    return np.abs(m.values.T @ x)


def sample_mixing(s: int, n_obs: int, rng: Pcg32) -> MixingMatrix:
    """Entries i.i.d. normal with mean -0.5 and standard deviation 0.5."""
    return MixingMatrix(rng.normal(-0.5, 0.5, (s, n_obs)))


def add_noise(y: np.ndarray, sigma_n: float, rng: Pcg32) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if sigma_n == 0.0:
        return y.copy()
    return y + rng.normal(0.0, sigma_n, y.shape)


# ---------------------------------------------------------------------------
# Operators and observation sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelOperator:
    """Convolutional ground truth; sources are single images [C,H,W]."""

    kernel: ConvKernel
    name: str = "kernel"

    @property
    def operator_id(self) -> str:
        kh, kw = self.kernel.values.shape
        return f"{self.name}({kh}x{kw})"

    def apply(self, source: np.ndarray) -> np.ndarray:
        src = np.asarray(source, dtype=np.float64)
        if src.ndim == 4 and src.shape[0] == 1:
            src = src[0]  # [S=1,C,H,W]
        return apply_kernel(src, self.kernel)


@dataclass(frozen=True)
class MixingOperator:
    """Mixing ground truth; sources are [S, M] flattened row stacks."""

    matrix: MixingMatrix
    name: str = "mix_abs"

    @property
    def operator_id(self) -> str:
        s, n_obs = self.matrix.values.shape
        return f"{self.name}({s}->{n_obs})"

    def apply(self, source: np.ndarray) -> np.ndarray:
        src = np.asarray(source, dtype=np.float64)
        if src.ndim > 2:
            src = src.reshape(src.shape[0], -1)
        return mix_abs(self.matrix, src)


@dataclass
class ObservationSet:
    """N observed measurements plus provenance; may carry the true sources
    for later evaluation (the solver must never read those)."""

    observations: list
    operator_id: str
    seed: int
    source_refs: np.ndarray | None = None

    def __post_init__(self):
        if len(self.observations) < 1:
            raise ValueError("an observation set needs at least one observation")
        shapes = {np.asarray(o).shape for o in self.observations}
        if len(shapes) != 1:
            raise ShapeMismatchError(f"observations disagree on shape: {shapes}")
        self.observations = [
            np.ascontiguousarray(o, dtype=np.float64) for o in self.observations
        ]

    @property
    def n(self) -> int:
        return len(self.observations)

    @property
    def shape(self) -> tuple:
        return self.observations[0].shape

    def stacked(self) -> np.ndarray:
        return np.stack(self.observations)


def make_observations(
    sources,
    operator,
    n: int,
    rng: Pcg32 | None = None,
    noise_sigma: float = 0.0,
    seed: int = 0,
) -> ObservationSet:
    """Apply the ground-truth operator to the first ``n`` source sets.

    ``sources`` is a sequence of per-observation source arrays (a [C,H,W]
    image for kernel operators, an [S, ...] stack for mixing).  Noise, if
    requested, needs an rng.
    """
    if n < 1 or len(sources) < n:
        raise ValueError(f"need at least {n} source sets, got {len(sources)}")
    obs = []
    for j in range(n):
        y = operator.apply(np.asarray(sources[j], dtype=np.float64))
        if noise_sigma > 0.0:
            if rng is None:
                raise ValueError("noise requires an rng")
            y = add_noise(y, noise_sigma, rng)
        obs.append(y)
    refs = np.stack([np.asarray(sources[j], dtype=np.float64) for j in range(n)])
    return ObservationSet(obs, operator.operator_id, seed, refs)


def save_observations(stem, obs: ObservationSet) -> None:
    """JSON manifest at <stem>.json + float32 little-endian payload at
    <stem>.f32 (+ <stem>.sources.f32 when ground truth is attached)."""
    stem = str(stem)
    payload = obs.stacked().astype("<f4")
    manifest = {
        "operator_id": obs.operator_id,
        "seed": obs.seed,
        "n": obs.n,
        "shape": list(obs.shape),
        "dtype": "f32le",
        "has_sources": obs.source_refs is not None,
    }
    if obs.source_refs is not None:
        manifest["sources_shape"] = list(obs.source_refs.shape)
        with open(stem + ".sources.f32", "wb") as fh:
            fh.write(obs.source_refs.astype("<f4").tobytes())
    with open(stem + ".json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(stem + ".f32", "wb") as fh:
        fh.write(payload.tobytes())


def load_observations(stem) -> ObservationSet:
    stem = str(stem)
    with open(stem + ".json") as fh:
        manifest = json.load(fh)
    shape = tuple(manifest["shape"])
    n = int(manifest["n"])
    count = n * int(np.prod(shape))
    with open(stem + ".f32", "rb") as fh:
        blob = fh.read()
    if len(blob) != 4 * count:
        raise FormatError(
            f"observation payload mismatch: expected {4 * count} bytes, "
            f"found {len(blob)}"
        )
    data = np.frombuffer(blob, "<f4").astype(np.float64).reshape((n,) + shape)
    refs = None
    if manifest.get("has_sources"):
        sshape = tuple(manifest["sources_shape"])
        with open(stem + ".sources.f32", "rb") as fh:
            sblob = fh.read()
        refs = np.frombuffer(sblob, "<f4").astype(np.float64).reshape(sshape)
    return ObservationSet(
        list(data), manifest["operator_id"], int(manifest["seed"]), refs
    )
