"""Layers, parameter bookkeeping, and the Adam optimizer.

Parameters are shared ``Tensor`` objects: layers hold them, a
:class:`ParameterSet` names them, and ``adam_step`` swaps their buffers in
place between tapes.  A training step therefore looks like::

    tape = Tape()
    leaves = make_leaves(tape, params)
    loss = model.forward(tape, x, leaves)
    backward(tape, loss)
    pull_grads(params, leaves)
    adam_step(params, state, lr)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape, Tensor
from .errors import ShapeMismatchError
from .rng import Pcg32


class ParameterSet:
    """Ordered, named parameter tensors with paired gradient buffers."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._grads: dict[str, np.ndarray | None] = {}

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self._params[name] = tensor
        self._grads[name] = None
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def grad(self, name: str) -> np.ndarray:
        g = self._grads[name]
        if g is None:
            g = np.zeros(self._params[name].shape)
            self._grads[name] = g
        return g

    def accumulate_grad(self, name: str, g: np.ndarray) -> None:
        if g.shape != self._params[name].shape:
            raise ShapeMismatchError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {self._params[name].shape}"
            )
        prev = self._grads[name]
        self._grads[name] = g.copy() if prev is None else prev + g

    def zero_grads(self) -> None:
        for name in self._grads:
            self._grads[name] = None

    def n_values(self) -> int:
        total = 0
        for t in self._params.values():
            total += t.size
        return total

    def copy(self) -> "ParameterSet":
        out = ParameterSet()
        for name, t in self._params.items():
            out.add(name, t.copy())
        return out


def make_leaves(tape: Tape, params: ParameterSet) -> dict[str, Node]:
    return {name: tape.leaf(t) for name, t in params.items()}


def pull_grads(params: ParameterSet, leaves: dict[str, Node]) -> None:
    """Accumulate tape adjoints of the given leaves into the parameter set."""
    for name, node in leaves.items():
        if node.grad is not None:
            params.accumulate_grad(name, node.grad)


def zero_grads(params: ParameterSet) -> None:
    params.zero_grads()


def init_params(shape, rng: Pcg32, scheme: str = "normal", std: float = 0.02) -> Tensor:
    """Fresh parameter tensor: i.i.d. N(0, std^2) entries, or zeros."""
    shape = tuple(int(s) for s in shape)
    if scheme == "zeros":
        return Tensor(np.zeros(shape))
    if scheme == "normal":
        if std == 0.0:
            return Tensor(np.zeros(shape))
        return Tensor(rng.normal(0.0, std, shape))
    raise ValueError(f"unknown init scheme {scheme!r}")


@dataclass
class DenseLayer:
    """Affine map: weights [out,in], bias [out]."""

    weights: Tensor
    bias: Tensor

    def forward(self, x: Node, w: Node | None = None, b: Node | None = None) -> Node:
        # auto-created leaves are frozen: callers who train a layer pass
        # explicit leaf nodes and pull gradients from those
        w = w if w is not None else x.tape.leaf(self.weights, constant=True)
        b = b if b is not None else x.tape.leaf(self.bias, constant=True)
        xv = x.value
        if xv.ndim == 1:
            col = ad.reshape(x, (xv.shape[0], 1))
            out = ad.add(ad.matmul(w, col), ad.reshape(b, (self.bias.shape[0], 1)))
            return ad.reshape(out, (self.weights.shape[0],))
        if xv.ndim == 2:
            return ad.add(ad.matmul(w, x), ad.reshape(b, (self.bias.shape[0], 1)))
        raise ShapeMismatchError(f"dense input must be 1-D or 2-D, got {xv.shape}")


@dataclass
class Conv2dLayer:
    """Same-size convolution: filters [C_out,C_in,kh,kw], bias [C_out]."""

    filters: Tensor
    bias: Tensor

    def forward(self, x: Node, w: Node | None = None, b: Node | None = None) -> Node:
        w = w if w is not None else x.tape.leaf(self.filters, constant=True)
        b = b if b is not None else x.tape.leaf(self.bias, constant=True)
        out = ad.conv2d_same(x, w)
        c = self.bias.shape[0]
        bshape = (c, 1, 1) if out.value.ndim == 3 else (1, c, 1, 1)
        return ad.add(out, ad.reshape(b, bshape))


def dense_forward(layer: DenseLayer, x: Node) -> Node:
    return layer.forward(x)


def conv_forward(layer: Conv2dLayer, x: Node) -> Node:
    return layer.forward(x)


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per named parameter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def copy(self) -> "AdamState":
        out = AdamState(self.beta1, self.beta2, self.eps, self.t)
        out.m = {k: v.copy() for k, v in self.m.items()}
        out.v = {k: v.copy() for k, v in self.v.items()}
        return out


def adam_step(params: ParameterSet, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update over every parameter in the set.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps), with
    m_hat = m/(1-beta1^t) and v_hat = v/(1-beta2^t); t increments once per
    call regardless of how many parameters the set holds.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, p in params.items():
        g = params.grad(name)
        m = state.m.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        else:
            v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        p.assign_(p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
