"""Trainable stand-ins for the unknown measurement process.

Two shallow families: a 2-layer convolutional net for filtering-type
measurements (purely linear end to end by default, so the two banks
compose into one effective kernel), and a 2-layer pixel-shared dense net
with a ReLU hidden for mixing-type measurements.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ShapeMismatchError
from .gan import KIND_CONV, KIND_DENSE, ACT_NONE, ACT_RELU, LayerSpec
from .measurement import ConvKernel
from .nn import Conv2dLayer, DenseLayer, ParameterSet, init_params
from .rng import Pcg32


class ConvSurrogate:
    """hidden-channel convolution followed by a projection back to the
    image channels; no nonlinearity between them unless ``relu_hidden``."""

    def __init__(self, layer1: Conv2dLayer, layer2: Conv2dLayer, relu_hidden=False):
        self.layer1 = layer1
        self.layer2 = layer2
        self.relu_hidden = relu_hidden
        self.params = ParameterSet()
        self.params.add("f1.w", layer1.filters)
        self.params.add("f1.b", layer1.bias)
        self.params.add("f2.w", layer2.filters)
        self.params.add("f2.b", layer2.bias)

    @property
    def specs(self) -> list[LayerSpec]:
        act = ACT_RELU if self.relu_hidden else ACT_NONE
        return [
            LayerSpec(KIND_CONV, act, self.layer1.filters.shape),
            LayerSpec(KIND_CONV, ACT_NONE, self.layer2.filters.shape),
        ]

    @property
    def layers(self):
        return [self.layer1, self.layer2]

    def forward(self, x: Node, leaves: dict[str, Node] | None = None) -> Node:
        leaves = leaves or {}
        h = self.layer1.forward(x, leaves.get("f1.w"), leaves.get("f1.b"))
        if self.relu_hidden:
            h = ad.relu(h)
        return self.layer2.forward(h, leaves.get("f2.w"), leaves.get("f2.b"))


class MixSurrogate:
    """Pixel-shared dense mixer: each pixel's S-vector of source values is
    mapped to n_obs mixture values through a 16-unit ReLU hidden layer.

    Inputs are [S, n_pixels] column stacks (pixels may span a whole batch
    of observation sets); outputs are [n_obs, n_pixels]."""

    def __init__(self, layer1: DenseLayer, layer2: DenseLayer):
        self.layer1 = layer1
        self.layer2 = layer2
        self.params = ParameterSet()
        self.params.add("f1.w", layer1.weights)
        self.params.add("f1.b", layer1.bias)
        self.params.add("f2.w", layer2.weights)
        self.params.add("f2.b", layer2.bias)

    @property
    def specs(self) -> list[LayerSpec]:
        return [
            LayerSpec(
                KIND_DENSE, ACT_RELU, (*self.layer1.weights.shape, 0, 0)
            ),
            LayerSpec(
                KIND_DENSE, ACT_NONE, (*self.layer2.weights.shape, 0, 0)
            ),
        ]

    @property
    def layers(self):
        return [self.layer1, self.layer2]

    def forward(self, x: Node, leaves: dict[str, Node] | None = None) -> Node:
        leaves = leaves or {}
        h = self.layer1.forward(x, leaves.get("f1.w"), leaves.get("f1.b"))
        h = ad.relu(h)
        return self.layer2.forward(h, leaves.get("f2.w"), leaves.get("f2.b"))


def build_conv_surrogate(
    channels: int,
    rng: Pcg32,
    hidden: int = 16,
    ksize: int = 5,
    relu_hidden: bool = False,
    init_std: float = 0.02,
) -> ConvSurrogate:
    layer1 = Conv2dLayer(
        init_params((hidden, channels, ksize, ksize), rng, "normal", init_std),
        init_params((hidden,), rng, "zeros"),
    )
    layer2 = Conv2dLayer(
        init_params((channels, hidden, ksize, ksize), rng, "normal", init_std),
        init_params((channels,), rng, "zeros"),
    )
    return ConvSurrogate(layer1, layer2, relu_hidden)


def build_mix_surrogate(
    s: int, n_obs: int, rng: Pcg32, hidden: int = 16, init_std: float = 0.02
) -> MixSurrogate:
    layer1 = DenseLayer(
        init_params((hidden, s), rng, "normal", init_std),
        init_params((hidden,), rng, "zeros"),
    )
    layer2 = DenseLayer(
        init_params((n_obs, hidden), rng, "normal", init_std),
        init_params((n_obs,), rng, "zeros"),
    )
    return MixSurrogate(layer1, layer2)


def surrogate_forward(s, x: Node, leaves=None) -> Node:
    return s.forward(x, leaves)


def effective_kernel(s: ConvSurrogate) -> np.ndarray:
    """Single kernel bank equivalent to the two linear conv layers.

    Returns [C_out, C_in, kh1+kh2-1, kw1+kw2-1]; biases are ignored and the
    hidden ReLU variant has no single-kernel equivalent.  Applying the
    result with apply_kernel matches the two-layer forward exactly except
    where the intermediate zero padding truncates information, i.e. within
    (k2//2) pixels of the border; inputs that are zero on that margin match
    everywhere.
    """
    if s.relu_hidden:
        raise ValueError("effective_kernel is undefined for a ReLU hidden layer")
    k1 = s.layer1.filters.data  # [M, C, kh1, kw1]
    k2 = s.layer2.filters.data  # [O, M, kh2, kw2]
    _, c_in, kh1, kw1 = k1.shape
    c_out, _, kh2, kw2 = k2.shape
    out = np.zeros((c_out, c_in, kh1 + kh2 - 1, kw1 + kw2 - 1))
    for r in range(kh2):
        for t in range(kw2):
            out[:, :, r : r + kh1, t : t + kw1] += np.einsum(
                "om,mcpq->ocpq", k2[:, :, r, t], k1
            )
    return out


def effective_kernel_single(s: ConvSurrogate) -> ConvKernel:
    """Convenience for single-channel surrogates."""
    k = effective_kernel(s)
    if k.shape[0] != 1 or k.shape[1] != 1:
        raise ShapeMismatchError(
            f"surrogate has {k.shape[0]}x{k.shape[1]} channel pairs, expected 1x1"
        )
    return ConvKernel(k[0, 0])
