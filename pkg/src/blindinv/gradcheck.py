"""Randomized gradient verification across every differentiable op and
through end-to-end recovery graphs.

Each entry builds a scalar-valued function of one tensor and compares the
tape gradient against central finite differences; kinked ops mask the
coordinates sitting on their kink.  The CLI's ``gradcheck`` subcommand
and the test suite both run this table.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, grad_check
from .gan import GanConfig, build_discriminator, build_generator, perceptual_loss
from .rng import Pcg32
from .solver import total_loss
from .surrogate import build_conv_surrogate, build_mix_surrogate

DEFAULT_TOL = 1e-4


def _unary(op, lo=-2.0, hi=2.0, mask_kink=None):
    def case(rng: Pcg32):
        x = rng.uniform(lo, hi, (3, 4))

        def f(leaf):
            return ad.sum(op(leaf))

        mask = mask_kink(x) if mask_kink else None
        return f, Tensor(x), mask

    return case


def _case_add(rng):
    c = Tensor(rng.normal(0, 1, (3, 1)))  # bias-style broadcast
    w = Tensor(rng.normal(0, 1, (3, 5)))

    def f(leaf):
        cn = leaf.tape.leaf(c)
        wn = leaf.tape.leaf(w)
        return ad.sum(ad.mul_elem(ad.add(leaf, cn), wn))

    return f, Tensor(rng.normal(0, 1, (3, 5))), None


def _case_sub(rng):
    c = Tensor(rng.normal(0, 1, (4,)))

    def f(leaf):
        return ad.sum(ad.tanh(ad.sub(leaf, leaf.tape.leaf(c))))

    return f, Tensor(rng.normal(0, 1, (2, 4))), None


def _case_mul(rng):
    c = Tensor(rng.normal(0, 1, (2, 4)))

    def f(leaf):
        return ad.sum(ad.mul_elem(leaf, leaf.tape.leaf(c)))

    return f, Tensor(rng.normal(0, 1, (2, 4))), None


def _case_scalar_mul(rng):
    # keep |c| away from 0 so the gradient is not pure noise
    c = float(rng.uniform(0.5, 2.0, (1,))[0]) * (1 if rng.below(2) else -1)

    def f(leaf):
        return ad.sum(ad.tanh(ad.scalar_mul(leaf, c)))

    return f, Tensor(rng.normal(0, 1, (5,))), None


def _case_matmul(rng):
    w = Tensor(rng.normal(0, 1, (4, 3)))

    def f(leaf):
        return ad.sum(ad.sigmoid(ad.matmul(leaf.tape.leaf(w), leaf)))

    return f, Tensor(rng.normal(0, 1, (3, 2))), None


def _case_conv_input(rng):
    filters = Tensor(rng.normal(0, 0.5, (2, 3, 3, 3)))

    def f(leaf):
        return ad.sum(ad.tanh(ad.conv2d_same(leaf, leaf.tape.leaf(filters))))

    return f, Tensor(rng.normal(0, 1, (3, 5, 5))), None


def _case_conv_filters(rng):
    x = Tensor(rng.normal(0, 1, (2, 2, 4, 4)))

    def f(leaf):
        return ad.sum(ad.tanh(ad.conv2d_same(leaf.tape.leaf(x), leaf)))

    return f, Tensor(rng.normal(0, 0.5, (2, 2, 3, 3))), None


def _kink_mask(threshold=1e-3):
    def mask(x):
        return np.abs(x) < threshold

    return mask


def _case_log_clamped(rng):
    x = rng.uniform(0.05, 2.0, (3, 3))

    def f(leaf):
        return ad.sum(ad.log_clamped(leaf))

    return f, Tensor(x), None


def _case_l1(rng):
    x = rng.normal(0, 1, (8,))

    def f(leaf):
        return ad.l1(leaf)

    return f, Tensor(x), np.abs(x) < 1e-3


def _case_reshape_permute(rng):
    w = Tensor(rng.normal(0, 1, (4, 6)))

    def f(leaf):
        x = ad.permute(ad.reshape(leaf, (2, 3, 4)), (2, 1, 0))
        x = ad.reshape(x, (4, 6))
        return ad.sum(ad.mul_elem(x, x.tape.leaf(w)))

    return f, Tensor(rng.normal(0, 1, (24,))), None


def _tiny_gan(rng):
    # wide init keeps activations spread out, so gradients sit well above
    # the finite-difference noise floor
    cfg = GanConfig(latent_dim=6, image_shape=(1, 5, 5), gen_hidden=(8,),
                    disc_hidden=(8,), init_std=0.5)
    gen = build_generator(cfg, rng)
    disc = build_discriminator(cfg, rng)
    return gen, disc


def _case_generator(rng):
    gen, _ = _tiny_gan(rng)

    def f(leaf):
        return ad.sum(ad.tanh(gen.forward(leaf)))

    return f, Tensor(rng.uniform(-1, 1, (6, 2))), None


def _case_gan_surrogate(rng):
    """End-to-end: latents -> generator -> conv surrogate -> data term."""
    gen, _ = _tiny_gan(rng)
    surrogate = build_conv_surrogate(1, rng, hidden=3, ksize=3, init_std=0.5)
    y = Tensor(rng.normal(0, 0.5, (2, 1, 5, 5)))

    def f(leaf):
        cols = gen.forward(ad.permute(ad.reshape(leaf, (2, 6)), (1, 0)))
        x = ad.reshape(ad.permute(cols, (1, 0)), (2, 1, 5, 5))
        est = surrogate.forward(x)
        diff = ad.sub(est, leaf.tape.leaf(y))
        return ad.sum(ad.mul_elem(diff, diff))

    return f, Tensor(rng.uniform(-0.9, 0.9, (2, 1, 6))), None


def _case_total_loss(rng):
    """End-to-end: the full objective including the perceptual term."""
    gen, disc = _tiny_gan(rng)
    surrogate = build_mix_surrogate(2, 3, rng, init_std=0.5)
    y = rng.normal(0.2, 0.5, (1, 3, 25))

    def f(leaf):
        cols = gen.forward(ad.permute(ad.reshape(leaf, (2, 6)), (1, 0)))
        x = ad.reshape(cols, (25, 1, 2))
        x = ad.permute(x, (2, 1, 0))
        x = ad.reshape(x, (2, 25))
        est = surrogate.forward(x)
        est = ad.permute(ad.reshape(est, (3, 1, 25)), (1, 0, 2))
        return total_loss(est, y, disc, cols, alpha=1e-2)

    return f, Tensor(rng.uniform(-0.9, 0.9, (1, 2, 6))), None


def _case_perceptual(rng):
    _, disc = _tiny_gan(rng)

    def f(leaf):
        return perceptual_loss(disc, leaf)

    return f, Tensor(rng.uniform(-0.9, 0.9, (25, 3))), None


CASES = {
    "add": _case_add,
    "sub": _case_sub,
    "mul_elem": _case_mul,
    "scalar_mul": _case_scalar_mul,
    "matmul": _case_matmul,
    "conv2d_input": _case_conv_input,
    "conv2d_filters": _case_conv_filters,
    "relu": _unary(ad.relu, mask_kink=_kink_mask()),
    "leaky_relu": _unary(ad.leaky_relu, mask_kink=_kink_mask()),
    "tanh": _unary(ad.tanh),
    "sigmoid": _unary(ad.sigmoid),
    "abs": _unary(ad.abs_elem, mask_kink=_kink_mask()),
    "log_clamped": _case_log_clamped,
    "l1": _case_l1,
    "reshape_permute": _case_reshape_permute,
    "generator": _case_generator,
    "gan_surrogate_e2e": _case_gan_surrogate,
    "total_loss_e2e": _case_total_loss,
    "perceptual_loss": _case_perceptual,
}


def run_suite(trials: int = 100, seed: int = 0) -> dict[str, float]:
    """Max relative gradient error per case over ``trials`` seeded draws."""
    errors = {}
    for index, (name, case) in enumerate(CASES.items()):
        rng = Pcg32(seed).spawn(index)
        worst = 0.0
        for _ in range(trials):
            f, x, mask = case(rng)
            worst = max(worst, grad_check(f, x, skip_mask=mask))
        errors[name] = worst
    return errors
