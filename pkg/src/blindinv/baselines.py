"""Comparison methods: latent-space projected descent with and without a
known forward operator, naive additive separation, Wiener deconvolution,
and FastICA.

The gradient baselines run through :func:`solver.latent_descent`, i.e.
the exact code path the solver's latent phase uses, differing only in the
forward map applied to the generator output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tensor
from .errors import NumericalError, ShapeMismatchError, UnderdeterminedError
from .gan import Discriminator, Generator
from .measurement import ConvKernel, KernelOperator, MixingOperator
from .rng import Pcg32
from .solver import init_latents, latent_descent, total_loss
from . import solver as _solver


@dataclass
class BaselineResult:
    method: str
    sources: np.ndarray  # [N, S, C, H, W]
    initial_loss: float
    final_loss: float
    loss_history: list = field(default_factory=list)
    seed: int = 0
    metrics: dict = field(default_factory=dict)
    runtime_ms: float = 0.0
    warnings: list = field(default_factory=list)


def _stack(y_obs) -> np.ndarray:
    return _solver._observation_stack(y_obs)


def _sum_sources_map(out_shape, obs_shape=None):
    """Forward map summing the S generated sources of each observation:
    [C*H*W, N*S] columns -> [N, C, H, W] unweighted sums.

    When the observations are flattened multi-mixture stacks
    [N, n_rows, C*H*W], the same summed image is tiled across the rows so
    the additive model can still be scored against them.
    """
    m_pix = int(np.prod(out_shape))
    rows = None
    if obs_shape is not None and len(obs_shape) == 3 and obs_shape[2] == m_pix:
        rows = obs_shape[1]

    def forward_map(cols: Node, n: int, s: int) -> Node:
        m = cols.value.shape[0]
        grouped = ad.reshape(cols, (m * n, s))
        ones = grouped.tape.leaf(Tensor(np.ones((s, 1))), constant=True)
        summed = ad.matmul(grouped, ones)  # [m*n, 1]
        if rows is None:
            x = ad.permute(ad.reshape(summed, (m, n)), (1, 0))
            return ad.reshape(x, (n,) + tuple(out_shape))
        tile = grouped.tape.leaf(Tensor(np.ones((rows, 1))), constant=True)
        x = ad.matmul(tile, ad.reshape(summed, (1, m * n)))  # [rows, m*n]
        x = ad.reshape(x, (rows, m, n))
        return ad.permute(x, (2, 0, 1))

    return forward_map


def _kernel_operator_map(operator: KernelOperator, out_shape):
    c = out_shape[0]
    k = operator.kernel.values
    filters = np.zeros((c, c, k.shape[0], k.shape[1]))
    for ch in range(c):
        filters[ch, ch] = k

    def forward_map(cols: Node, n: int, s: int) -> Node:
        x = ad.permute(cols, (1, 0))
        x = ad.reshape(x, (n,) + tuple(out_shape))
        f = x.tape.leaf(Tensor(filters), constant=True)
        return ad.conv2d_same(x, f)

    return forward_map


def _mixing_operator_map(operator: MixingOperator):
    mt = operator.matrix.values.T  # [n_obs, S]

    def forward_map(cols: Node, n: int, s: int) -> Node:
        m = cols.value.shape[0]
        x = ad.reshape(cols, (m, n, s))
        x = ad.permute(x, (2, 1, 0))
        x = ad.reshape(x, (s, n * m))
        w = x.tape.leaf(Tensor(mt), constant=True)
        out = ad.abs_elem(ad.matmul(w, x))
        out = ad.reshape(out, (mt.shape[0], n, m))
        return ad.permute(out, (1, 0, 2))

    return forward_map


def _operator_map(operator, out_shape):
    if isinstance(operator, KernelOperator):
        return _kernel_operator_map(operator, out_shape)
    if isinstance(operator, MixingOperator):
        return _mixing_operator_map(operator)
    raise TypeError(f"unsupported operator type {type(operator).__name__}")


def _run_pgd(
    method: str,
    gen: Generator,
    disc: Discriminator,
    y: np.ndarray,
    forward_map,
    s: int,
    steps: int,
    lr: float,
    alpha: float,
    rng: Pcg32,
    clip_lo: float,
    clip_hi: float,
    loss_norm: str,
) -> BaselineResult:
    n = y.shape[0]
    z0 = init_latents(n, s, gen.latent_dim, rng)
    z, history = latent_descent(
        gen, disc, y, forward_map, n, s, steps, lr, alpha,
        clip_lo, clip_hi, z0, loss_norm=loss_norm,
    )
    final = _final_loss(gen, disc, y, forward_map, z, n, s, alpha, loss_norm)
    cols = _solver._columns_values(gen, z)
    sources = np.ascontiguousarray(cols.T).reshape((n, s) + tuple(gen.output_shape))
    initial = history[0] if history else final
    return BaselineResult(
        method=method,
        sources=sources,
        initial_loss=initial,
        final_loss=final,
        loss_history=history,
        seed=rng.seed,
    )


def _final_loss(gen, disc, y, forward_map, z, n, s, alpha, loss_norm) -> float:
    tape = ad.Tape()
    zleaf = tape.leaf(Tensor(z), constant=True)
    cols = _solver._gen_columns(gen, zleaf, n, s)
    y_est = forward_map(cols, n, s)
    return total_loss(y_est, y, disc, cols, alpha, loss_norm).value.item()


def pgd_no_forward(
    gen: Generator,
    disc: Discriminator,
    y_obs,
    steps: int,
    lr: float,
    alpha: float,
    rng: Pcg32,
    clip_lo: float = -1.0,
    clip_hi: float = 1.0,
    loss_norm: str = "l1",
) -> BaselineResult:
    """Fit the generator output to the observation itself, with no model
    of the measurement process."""
    y = _stack(y_obs)
    fmap = _sum_sources_map(gen.output_shape, y.shape)
    return _run_pgd(
        "pgd", gen, disc, y, fmap, 1, steps, lr, alpha, rng,
        clip_lo, clip_hi, loss_norm,
    )


def pgd_known_forward(
    gen: Generator,
    disc: Discriminator,
    y_obs,
    true_operator,
    steps: int,
    lr: float,
    alpha: float,
    rng: Pcg32,
    clip_lo: float = -1.0,
    clip_hi: float = 1.0,
    loss_norm: str = "l1",
) -> BaselineResult:
    """Projected descent through the exact ground-truth operator."""
    y = _stack(y_obs)
    s = (
        true_operator.matrix.values.shape[0]
        if isinstance(true_operator, MixingOperator)
        else 1
    )
    fmap = _operator_map(true_operator, gen.output_shape)
    return _run_pgd(
        "pgd_known", gen, disc, y, fmap, s, steps, lr, alpha, rng,
        clip_lo, clip_hi, loss_norm,
    )


def naive_additive(
    gen: Generator,
    disc: Discriminator,
    y_obs,
    s: int,
    steps: int,
    lr: float,
    alpha: float,
    rng: Pcg32,
    clip_lo: float = -1.0,
    clip_hi: float = 1.0,
    loss_norm: str = "l1",
) -> BaselineResult:
    """Assume observations are plain unweighted sums of the S sources."""
    y = _stack(y_obs)
    fmap = _sum_sources_map(gen.output_shape, y.shape)
    return _run_pgd(
        "naive_additive", gen, disc, y, fmap, s, steps, lr, alpha, rng,
        clip_lo, clip_hi, loss_norm,
    )


# ---------------------------------------------------------------------------
# Wiener deconvolution (not blind: the kernel is given)
# ---------------------------------------------------------------------------


def _dft_matrix(n: int) -> np.ndarray:
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def dft2d(x: np.ndarray) -> np.ndarray:
    """Naive separable 2-D DFT via explicit twiddle matrices."""
    x = np.asarray(x)
    h, w = x.shape
    return _dft_matrix(h) @ x @ _dft_matrix(w)


def idft2d(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    h, w = x.shape
    return (np.conj(_dft_matrix(h)) @ x @ np.conj(_dft_matrix(w))) / (h * w)


def kernel_spectrum(kernel: ConvKernel, height: int, width: int) -> np.ndarray:
    """Transfer function H of circular correlation with the kernel:
    dft2d(circular_apply(x, k)) == H * dft2d(x).

    Correlation is convolution with the flipped kernel, hence the
    conjugate of the anchored kernel's DFT (real kernels).
    """
    k = kernel.values
    kh, kw = k.shape
    if kh > height or kw > width:
        raise ShapeMismatchError(
            f"kernel {k.shape} larger than image ({height}, {width})"
        )
    emb = np.zeros((height, width))
    emb[:kh, :kw] = k
    emb = np.roll(emb, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.conj(dft2d(emb))


def circular_apply(image: np.ndarray, kernel: ConvKernel) -> np.ndarray:
    """Circular (wrap-around) correlation; the exact forward model that
    Wiener deconvolution inverts."""
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    k = kernel.values
    ah, aw = k.shape[0] // 2, k.shape[1] // 2
    out = np.zeros_like(img)
    for p in range(k.shape[0]):
        for q in range(k.shape[1]):
            out += k[p, q] * np.roll(img, (-(p - ah), -(q - aw)), axis=(1, 2))
    return out[0] if squeeze else out


def wiener_deconvolve(y: np.ndarray, kernel: ConvKernel, k_reg: float) -> np.ndarray:
    """Frequency-domain regularized inverse filter:
    X = conj(H) Y / (|H|^2 + k_reg), computed per channel."""
    if k_reg < 0:
        raise ValueError(f"k_reg must be non-negative, got {k_reg}")
    img = np.asarray(y, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[None]
    h, w = img.shape[1], img.shape[2]
    spec = kernel_spectrum(kernel, h, w)
    denom = np.abs(spec) ** 2 + k_reg
    out = np.empty_like(img)
    for c in range(img.shape[0]):
        yf = dft2d(img[c])
        out[c] = idft2d(np.conj(spec) * yf / denom).real
    return out[0] if squeeze else out


# ---------------------------------------------------------------------------
# FastICA (symmetric decorrelation, tanh contrast)
# ---------------------------------------------------------------------------


@dataclass
class FastIcaResult:
    components: np.ndarray  # [S, n_samples]
    converged: bool
    n_iter: int
    unmixing: np.ndarray | None = None


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(w @ w.T)
    if evals.min() <= 1e-15:
        raise NumericalError("degenerate unmixing matrix during decorrelation")
    return (evecs * (1.0 / np.sqrt(evals))) @ evecs.T @ w


def fastica(
    y: np.ndarray,
    s: int,
    rng: Pcg32 | None = None,
    tol: float = 1e-6,
    max_iter: int = 200,
) -> FastIcaResult:
    """Separate ``s`` components from [n_obs, n_samples] linear mixtures.

    Rows are centered, whitened via the eigendecomposition of their
    covariance, then rotated by fixed-point iteration with the tanh
    nonlinearity and symmetric decorrelation (so the unmixing matrix stays
    orthonormal).  Requires n_obs >= s; a non-converged run returns the
    best iterate flagged ``converged=False``.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 2:
        raise ShapeMismatchError(f"mixtures must be 2-D, got {y.shape}")
    n_obs, n_samples = y.shape
    if n_obs < s:
        raise UnderdeterminedError(
            f"underdetermined: {n_obs} mixtures cannot separate {s} sources"
        )
    centered = y - y.mean(axis=1, keepdims=True)
    cov = centered @ centered.T / max(n_samples - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:s]
    top = evals[order]
    if top.min() <= 1e-12 * max(top.max(), 1e-300):
        raise NumericalError("mixture covariance is rank deficient")
    whiten = (evecs[:, order] * (1.0 / np.sqrt(top))).T  # [S, n_obs]
    z = whiten @ centered  # [S, n_samples], identity covariance

    if s == 1:
        return FastIcaResult(z, True, 0, np.eye(1))

    rng = rng or Pcg32(0)
    w = _sym_decorrelate(rng.normal(0.0, 1.0, (s, s)))
    converged = False
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        u = w @ z
        g = np.tanh(u)
        g_prime = 1.0 - g * g
        w_new = (g @ z.T) / n_samples - np.diag(g_prime.mean(axis=1)) @ w
        w_new = _sym_decorrelate(w_new)
        delta = float(np.abs(np.abs(np.diag(w_new @ w.T)) - 1.0).max())
        w = w_new
        if delta < tol:
            converged = True
            break
    return FastIcaResult(w @ z, converged, n_iter, w)
