"""Desk-scale generative prior: generator, discriminator, adversarial
training, scoring, and checkpoint serialization.

The generator maps a latent vector to an image in [-1,1] through dense
layers with leaky-ReLU hiddens and a tanh head; the discriminator mirrors
it with a sigmoid head.  Both operate on column batches: latents are
[T, B], images are [C*H*W, B].

Checkpoint wire format (binary, little-endian)::

    magic "GPRI" | u32 version=1 | u32 latent_dim | u32 layer_count
    per layer: u8 kind (0=dense, 1=conv2d)
               u8 activation (0=none, 1=relu, 2=leaky0.2, 3=tanh, 4=sigmoid)
               u32 dims[4]
    then every parameter as IEEE-754 float32, layer by layer, weights
    before bias.

For dense layers dims is (out, in, h, w) where (h, w) is zero except on a
generator's output layer, where it records the spatial image shape so the
loader can rebuild ``output_shape`` (channels = out // (h*w)).  Generator
layers come first and end at the tanh-activated layer; the remaining
records form the discriminator.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape, Tensor
from .errors import FormatError, NumericalError, ShapeMismatchError
from .nn import (
    AdamState,
    Conv2dLayer,
    DenseLayer,
    ParameterSet,
    adam_step,
    init_params,
    make_leaves,
    pull_grads,
)
from .rng import Pcg32

MAGIC = b"GPRI"
VERSION = 1

KIND_DENSE = 0
KIND_CONV = 1

ACT_NONE = 0
ACT_RELU = 1
ACT_LEAKY = 2
ACT_TANH = 3
ACT_SIGMOID = 4

_LEAKY_SLOPE = 0.2


@dataclass(frozen=True)
class LayerSpec:
    kind: int
    activation: int
    dims: tuple[int, int, int, int]


@dataclass
class GanConfig:
    latent_dim: int = 100
    image_shape: tuple = (1, 16, 16)
    gen_hidden: tuple = (128, 256)
    disc_hidden: tuple = (256, 128)
    init_std: float = 0.02


def _apply_activation(x: Node, code: int) -> Node:
    if code == ACT_NONE:
        return x
    if code == ACT_RELU:
        return ad.relu(x)
    if code == ACT_LEAKY:
        return ad.leaky_relu(x, _LEAKY_SLOPE)
    if code == ACT_TANH:
        return ad.tanh(x)
    if code == ACT_SIGMOID:
        return ad.sigmoid(x)
    raise FormatError(f"unknown activation code {code}")


class _DenseStack:
    """Shared machinery for dense column-batch networks."""

    def __init__(self, prefix: str, layers: list[DenseLayer], specs: list[LayerSpec]):
        self.prefix = prefix
        self.layers = layers
        self.specs = specs
        self.params = ParameterSet()
        for i, layer in enumerate(layers):
            self.params.add(f"{prefix}{i}.w", layer.weights)
            self.params.add(f"{prefix}{i}.b", layer.bias)

    def forward(self, x: Node, leaves: dict[str, Node] | None = None) -> Node:
        for i, (layer, spec) in enumerate(zip(self.layers, self.specs)):
            w = b = None
            if leaves is not None:
                w = leaves.get(f"{self.prefix}{i}.w")
                b = leaves.get(f"{self.prefix}{i}.b")
            x = _apply_activation(layer.forward(x, w, b), spec.activation)
        return x

    def forward_values(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward, used for sampling and detached batches."""
        for layer, spec in zip(self.layers, self.specs):
            x = layer.weights.data @ x + layer.bias.data[:, None]
            if spec.activation == ACT_RELU:
                x = np.maximum(x, 0.0)
            elif spec.activation == ACT_LEAKY:
                x = np.where(x > 0, x, _LEAKY_SLOPE * x)
            elif spec.activation == ACT_TANH:
                x = np.tanh(x)
            elif spec.activation == ACT_SIGMOID:
                x = np.where(
                    x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                    np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))),
                )
        return x


class Generator(_DenseStack):
    """Latent-to-image map; output range is (-1,1) via the tanh head."""

    def __init__(self, layers, specs, latent_dim: int, output_shape: tuple):
        super().__init__("g", layers, specs)
        self.latent_dim = latent_dim
        self.output_shape = tuple(output_shape)

    def sample(self, z) -> Tensor:
        z = np.asarray(z, dtype=np.float64).reshape(self.latent_dim, 1)
        flat = self.forward_values(z)[:, 0]
        return Tensor(flat.reshape(self.output_shape))

    def sample_batch(self, Z: np.ndarray) -> np.ndarray:
        """Z is [B, T]; returns [B, C, H, W]."""
        cols = self.forward_values(np.ascontiguousarray(Z.T))
        return np.ascontiguousarray(cols.T).reshape((-1,) + self.output_shape)


class Discriminator(_DenseStack):
    """Image-to-score map; output in (0,1) via the sigmoid head."""

    def __init__(self, layers, specs):
        super().__init__("d", layers, specs)

    def score(self, image) -> float:
        flat = np.asarray(image, dtype=np.float64).reshape(-1, 1)
        return float(self.forward_values(flat)[0, 0])


def _dense(rng: Pcg32, n_out: int, n_in: int, std: float) -> DenseLayer:
    return DenseLayer(
        init_params((n_out, n_in), rng, "normal", std),
        init_params((n_out,), rng, "zeros"),
    )


def build_generator(cfg: GanConfig, rng: Pcg32) -> Generator:
    c, h, w = cfg.image_shape
    widths = [cfg.latent_dim, *cfg.gen_hidden, c * h * w]
    layers, specs = [], []
    for i in range(len(widths) - 1):
        last = i == len(widths) - 2
        layers.append(_dense(rng, widths[i + 1], widths[i], cfg.init_std))
        specs.append(
            LayerSpec(
                KIND_DENSE,
                ACT_TANH if last else ACT_LEAKY,
                (widths[i + 1], widths[i], h if last else 0, w if last else 0),
            )
        )
    return Generator(layers, specs, cfg.latent_dim, cfg.image_shape)


def build_discriminator(cfg: GanConfig, rng: Pcg32) -> Discriminator:
    c, h, w = cfg.image_shape
    widths = [c * h * w, *cfg.disc_hidden, 1]
    layers, specs = [], []
    for i in range(len(widths) - 1):
        last = i == len(widths) - 2
        layers.append(_dense(rng, widths[i + 1], widths[i], cfg.init_std))
        specs.append(
            LayerSpec(
                KIND_DENSE,
                ACT_SIGMOID if last else ACT_LEAKY,
                (widths[i + 1], widths[i], 0, 0),
            )
        )
    return Discriminator(layers, specs)


def sample(gen: Generator, z) -> Tensor:
    return gen.sample(z)


def perceptual_loss(
    disc: Discriminator, batches, leaves: dict[str, Node] | None = None
) -> Node:
    """Sum of log(1 - D(x)) over every column of every batch.

    ``batches`` is a Node of image columns [C*H*W, B] or a list of them.
    Minimizing this drives the scores toward 1, i.e. toward images the
    discriminator accepts; the clamp in log keeps it finite when D
    saturates.
    """
    if isinstance(batches, Node):
        batches = [batches]
    total = None
    for x in batches:
        d = disc.forward(x, leaves)
        ones = x.tape.leaf(Tensor(np.ones(d.value.shape)))
        term = ad.sum(ad.log_clamped(ad.sub(ones, d)))
        total = term if total is None else ad.add(total, term)
    if total is None:
        raise ValueError("perceptual_loss needs at least one batch")
    return total


def gan_train(
    gen: Generator,
    disc: Discriminator,
    dataset: np.ndarray,
    epochs: int,
    batch: int,
    lr_g: float,
    lr_d: float,
    rng: Pcg32,
) -> list[dict]:
    """Adversarial training: one discriminator step (ascend
    log D(x) + log(1-D(G(z)))) then one non-saturating generator step
    (descend -log D(G(z))) per batch.

    Returns one record per epoch with mean d_loss/g_loss.  Batch order and
    latent draws come from ``rng`` only, so a fixed seed reproduces the
    log bit-for-bit.
    """
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim == 3:
        data = data[:, None]
    if data.ndim != 4 or data.shape[0] == 0:
        raise ValueError(f"dataset must be a non-empty [n,C,H,W] array, got {data.shape}")
    if data.min() < -1.0 - 1e-9 or data.max() > 1.0 + 1e-9:
        raise ValueError("dataset images must be scaled to [-1, 1]")
    n = data.shape[0]
    cols = np.ascontiguousarray(data.reshape(n, -1).T)  # [CHW, n]
    if cols.shape[0] != int(np.prod(gen.output_shape)):
        raise ShapeMismatchError(
            f"dataset images {data.shape[1:]} do not match generator output "
            f"{gen.output_shape}"
        )
    batch = max(1, min(batch, n))
    state_g = AdamState()
    state_d = AdamState()
    log = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        d_losses, g_losses = [], []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            real = np.ascontiguousarray(cols[:, idx])
            b = real.shape[1]
            z = rng.uniform(-1.0, 1.0, (gen.latent_dim, b))
            try:
                d_losses.append(
                    _disc_step(gen, disc, real, z, state_d, lr_d)
                )
                g_losses.append(_gen_step(gen, disc, z, state_g, lr_g))
            except NumericalError as exc:
                raise NumericalError(
                    f"GAN training diverged at epoch {epoch}, batch "
                    f"{start // batch}: {exc}"
                ) from exc
        log.append(
            {
                "epoch": epoch,
                "d_loss": float(np.mean(d_losses)),
                "g_loss": float(np.mean(g_losses)),
            }
        )
    return log


def _disc_step(gen, disc, real, z, state_d, lr_d) -> float:
    b = real.shape[1]
    fake = gen.forward_values(z)  # detached: generator is frozen here
    tape = Tape()
    leaves = make_leaves(tape, disc.params)
    d_real = disc.forward(tape.leaf(Tensor(real)), leaves)
    d_fake = disc.forward(tape.leaf(Tensor(fake)), leaves)
    ones = tape.leaf(Tensor(np.ones(d_fake.value.shape)))
    gain = ad.add(
        ad.sum(ad.log_clamped(d_real)),
        ad.sum(ad.log_clamped(ad.sub(ones, d_fake))),
    )
    loss = ad.scalar_mul(gain, -1.0 / b)
    ad.backward(tape, loss)
    disc.params.zero_grads()
    pull_grads(disc.params, leaves)
    adam_step(disc.params, state_d, lr_d)
    return loss.value.item()


def _gen_step(gen, disc, z, state_g, lr_g) -> float:
    b = z.shape[1]
    tape = Tape()
    leaves = make_leaves(tape, gen.params)
    x = gen.forward(tape.leaf(Tensor(z)), leaves)
    d = disc.forward(x)
    loss = ad.scalar_mul(ad.sum(ad.log_clamped(d)), -1.0 / b)
    ad.backward(tape, loss)
    gen.params.zero_grads()
    pull_grads(gen.params, leaves)
    adam_step(gen.params, state_g, lr_g)
    return loss.value.item()


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _layer_tensors(layer) -> tuple[Tensor, Tensor]:
    if isinstance(layer, DenseLayer):
        return layer.weights, layer.bias
    return layer.filters, layer.bias


def write_network(specs: list[LayerSpec], layers, latent_dim: int) -> bytes:
    head = [struct.pack("<4sIII", MAGIC, VERSION, latent_dim, len(specs))]
    for spec in specs:
        head.append(struct.pack("<BB4I", spec.kind, spec.activation, *spec.dims))
    payload = []
    for layer in layers:
        w, b = _layer_tensors(layer)
        payload.append(w.data.astype("<f4").tobytes())
        payload.append(b.data.astype("<f4").tobytes())
    return b"".join(head + payload)


def read_network(blob: bytes):
    """Parse the wire format; returns (latent_dim, specs, layers)."""
    if len(blob) < 16:
        raise FormatError(f"file too short for header: {len(blob)} bytes")
    magic, version, latent_dim, count = struct.unpack_from("<4sIII", blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    off = 16
    specs = []
    for _ in range(count):
        if off + 18 > len(blob):
            raise FormatError("truncated layer records")
        kind, activation, d0, d1, d2, d3 = struct.unpack_from("<BB4I", blob, off)
        off += 18
        specs.append(LayerSpec(kind, activation, (d0, d1, d2, d3)))
    expected = 0
    for spec in specs:
        if spec.kind == KIND_DENSE:
            expected += spec.dims[0] * spec.dims[1] + spec.dims[0]
        elif spec.kind == KIND_CONV:
            co, ci, kh, kw = spec.dims
            expected += co * ci * kh * kw + co
        else:
            raise FormatError(f"unknown layer kind {spec.kind}")
    actual = len(blob) - off
    if actual != 4 * expected:
        raise FormatError(
            f"parameter payload mismatch: expected {4 * expected} bytes, "
            f"found {actual}"
        )
    layers = []
    for spec in specs:
        if spec.kind == KIND_DENSE:
            out_n, in_n = spec.dims[0], spec.dims[1]
            w = np.frombuffer(blob, "<f4", out_n * in_n, off).astype(np.float64)
            off += 4 * out_n * in_n
            b = np.frombuffer(blob, "<f4", out_n, off).astype(np.float64)
            off += 4 * out_n
            layers.append(DenseLayer(Tensor(w.reshape(out_n, in_n)), Tensor(b)))
        else:
            co, ci, kh, kw = spec.dims
            w = np.frombuffer(blob, "<f4", co * ci * kh * kw, off).astype(np.float64)
            off += 4 * co * ci * kh * kw
            b = np.frombuffer(blob, "<f4", co, off).astype(np.float64)
            off += 4 * co
            layers.append(Conv2dLayer(Tensor(w.reshape(co, ci, kh, kw)), Tensor(b)))
    return latent_dim, specs, layers


def save_checkpoint(path, gen: Generator, disc: Discriminator) -> None:
    specs = gen.specs + disc.specs
    layers = gen.layers + disc.layers
    with open(path, "wb") as fh:
        fh.write(write_network(specs, layers, gen.latent_dim))


def load_checkpoint(path) -> tuple[Generator, Discriminator]:
    with open(path, "rb") as fh:
        blob = fh.read()
    latent_dim, specs, layers = read_network(blob)
    split = None
    for i, spec in enumerate(specs):
        if spec.activation == ACT_TANH:
            split = i + 1
            break
    if split is None:
        raise FormatError("no tanh-headed generator found in checkpoint")
    gspecs, dspecs = specs[:split], specs[split:]
    glayers, dlayers = layers[:split], layers[split:]
    if not dspecs or dspecs[-1].activation != ACT_SIGMOID:
        raise FormatError("discriminator must end in a sigmoid layer")
    out_spec = gspecs[-1]
    h, w = out_spec.dims[2], out_spec.dims[3]
    if h <= 0 or w <= 0 or out_spec.dims[0] % (h * w):
        raise FormatError("generator output layer lacks a valid shape hint")
    c = out_spec.dims[0] // (h * w)
    gen = Generator(glayers, gspecs, latent_dim, (c, h, w))
    disc = Discriminator(dlayers, dspecs)
    return gen, disc
