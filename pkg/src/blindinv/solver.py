"""Joint blind recovery by alternating projected gradient descent.

Given only N observations and the number of sources per observation, the
solver optimizes two unknowns against the observation-fidelity loss
sum_j ||Y_est_j - Y_obs_j|| + alpha * L_per:

* a shallow surrogate of the measurement process (T1 Adam steps per outer
  epoch at lr_theta, latents frozen), then
* the latent codes of a frozen pre-trained generator (T2 Adam steps at
  lr_z, surrogate frozen, every step followed by clipping the latents to
  the prior's box).

The surrogate phase backpropagates only the data term: the perceptual
term does not depend on the surrogate parameters, so its value is still
added to every reported loss but its (identically zero) gradient is
skipped.  Adam moments for both phases persist across outer epochs.

The solver's inputs are the observations, the source count, the surrogate
family, and a generator checkpoint; no ground-truth operator enters here,
which is what makes the recovery blind.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape, Tensor
from .errors import ConfigError, NumericalError, ShapeMismatchError
from .gan import (
    Discriminator,
    Generator,
    load_checkpoint,
    perceptual_loss,
    read_network,
    write_network,
)
from .measurement import ObservationSet
from .nn import AdamState, ParameterSet, adam_step, make_leaves, pull_grads
from .rng import Pcg32
from .surrogate import (
    ConvSurrogate,
    MixSurrogate,
    build_conv_surrogate,
    build_mix_surrogate,
)

_LOG_EPS = 1e-8


@dataclass
class SolverConfig:
    outer_epochs: int = 100
    surrogate_steps: int = 50
    latent_steps: int = 50
    lr_theta: float = 4e-3
    lr_z: float = 3e-4
    alpha: float = 1e-4
    clip_lo: float = -1.0
    clip_hi: float = 1.0
    sources_per_obs: int = 1
    n_observations: int | None = None
    loss_norm: str = "l1"
    surrogate_family: str = "conv"
    surrogate_hidden: int = 16
    surrogate_ksize: int = 5
    surrogate_relu: bool = False
    early_stop_tol: float | None = None
    early_stop_patience: int = 5

    def validate(self) -> None:
        if self.outer_epochs < 0 or self.surrogate_steps < 0 or self.latent_steps < 0:
            raise ConfigError("step counts must be non-negative")
        if self.lr_theta <= 0 or self.lr_z <= 0:
            raise ConfigError("learning rates must be positive")
        if self.clip_lo >= self.clip_hi:
            raise ConfigError(
                f"clip_lo {self.clip_lo} must be below clip_hi {self.clip_hi}"
            )
        if self.sources_per_obs < 1:
            raise ConfigError("sources_per_obs must be at least 1")
        if self.loss_norm not in ("l1", "l2"):
            raise ConfigError(f"unknown loss norm {self.loss_norm!r}")
        if self.surrogate_family not in ("conv", "mix"):
            raise ConfigError(f"unknown surrogate family {self.surrogate_family!r}")


@dataclass
class SolverState:
    z: Tensor  # [N, S, T]
    surrogate: object
    adam_theta: AdamState
    adam_z: AdamState
    loss_history: list = field(default_factory=list)


@dataclass
class RecoveryResult:
    sources: np.ndarray  # [N, S, C, H, W]
    surrogate: object
    initial_loss: float
    final_loss: float
    loss_history: list
    config: SolverConfig
    seed: int


def init_latents(n: int, s: int, latent_dim: int, rng: Pcg32) -> np.ndarray:
    """Uniform(-1, 1) latent block of shape [N, S, latent_dim]."""
    return rng.uniform(-1.0, 1.0, (n, s, latent_dim))


def project_clip(z: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.clip(z, lo, hi)


# ---------------------------------------------------------------------------
# Loss construction
# ---------------------------------------------------------------------------


def _data_term(y_est: Node, y_obs: Node, loss_norm: str) -> Node:
    diff = ad.sub(y_est, y_obs)
    if loss_norm == "l1":
        return ad.l1(diff)
    return ad.sum(ad.mul_elem(diff, diff))


def total_loss(
    y_est: Node,
    y_obs,
    disc: Discriminator | None,
    sources: Node | None,
    alpha: float,
    loss_norm: str = "l1",
) -> Node:
    """Observation fidelity plus the weighted perceptual term.

    ``y_est`` is the stacked estimate (the per-observation norms add up to
    one norm over the stack); ``sources`` is the [C*H*W, N*S] column batch
    fed to the discriminator.  With alpha == 0 the discriminator is not
    consulted.
    """
    if not isinstance(y_obs, Node):
        y_obs = y_est.tape.leaf(Tensor(np.asarray(y_obs, dtype=np.float64)))
    loss = _data_term(y_est, y_obs, loss_norm)
    if alpha != 0.0:
        if disc is None or sources is None:
            raise ValueError("alpha != 0 requires a discriminator and sources")
        loss = ad.add(loss, ad.scalar_mul(perceptual_loss(disc, sources), alpha))
    return loss


def _perceptual_value(disc: Discriminator, cols: np.ndarray) -> float:
    d = disc.forward_values(cols)
    return float(np.log(np.maximum(1.0 - d, _LOG_EPS)).sum())


# ---------------------------------------------------------------------------
# Family-specific shape plumbing
# ---------------------------------------------------------------------------


def _gen_columns(gen: Generator, z: Node, n: int, s: int) -> Node:
    """[N,S,T] latents -> generator output columns [C*H*W, N*S]."""
    flat = ad.reshape(z, (n * s, gen.latent_dim))
    return gen.forward(ad.permute(flat, (1, 0)))


def _conv_map(surrogate, out_shape):
    def forward_map(cols: Node, n: int, s: int, leaves=None) -> Node:
        x = ad.permute(cols, (1, 0))
        x = ad.reshape(x, (n * s,) + tuple(out_shape))
        return surrogate.forward(x, leaves)

    return forward_map


def _mix_map(surrogate):
    def forward_map(cols: Node, n: int, s: int, leaves=None) -> Node:
        m = cols.value.shape[0]
        x = ad.reshape(cols, (m, n, s))
        x = ad.permute(x, (2, 1, 0))
        x = ad.reshape(x, (s, n * m))
        out = surrogate.forward(x, leaves)
        n_obs = out.value.shape[0]
        out = ad.reshape(out, (n_obs, n, m))
        return ad.permute(out, (1, 0, 2))

    return forward_map


def _columns_values(gen: Generator, z: np.ndarray) -> np.ndarray:
    n, s, t = z.shape
    return gen.forward_values(np.ascontiguousarray(z.reshape(n * s, t).T))


# ---------------------------------------------------------------------------
# Phases
# ---------------------------------------------------------------------------


def surrogate_phase(
    state: SolverState,
    config: SolverConfig,
    gen: Generator,
    disc: Discriminator,
    y: np.ndarray,
) -> float:
    """T1 Adam steps on the surrogate parameters with latents frozen.

    Returns the total loss after the phase.  The generator output for the
    frozen latents is computed once and reused; the perceptual term is
    likewise constant here and only enters the reported loss.
    """
    n, s = y.shape[0], config.sources_per_obs
    cols = _columns_values(gen, state.z.data)
    lper = _perceptual_value(disc, cols) if config.alpha != 0.0 else 0.0
    fmap = _family_map(state.surrogate, config, gen)
    surrogate = state.surrogate
    for _ in range(config.surrogate_steps):
        tape = Tape()
        leaves = make_leaves(tape, surrogate.params)
        cols_node = tape.leaf(Tensor(cols), constant=True)
        y_est = fmap(cols_node, n, s, leaves)
        loss = _data_term(y_est, tape.leaf(Tensor(y), constant=True), config.loss_norm)
        ad.backward(tape, loss)
        surrogate.params.zero_grads()
        pull_grads(surrogate.params, leaves)
        adam_step(surrogate.params, state.adam_theta, config.lr_theta)
    return _eval_data_loss(state, config, gen, y) + config.alpha * lper


def latent_phase(
    state: SolverState,
    config: SolverConfig,
    gen: Generator,
    disc: Discriminator,
    y: np.ndarray,
) -> float:
    """T2 projected Adam steps on the latents with the surrogate frozen.

    Every step ends with clipping to [clip_lo, clip_hi].  Returns the
    total loss after the phase.
    """
    n, s = y.shape[0], config.sources_per_obs
    fmap = _family_map(state.surrogate, config, gen)
    zparams = ParameterSet()
    zt = zparams.add("z", state.z)
    for _ in range(config.latent_steps):
        tape = Tape()
        zleaf = tape.leaf(zt)
        cols = _gen_columns(gen, zleaf, n, s)
        y_est = fmap(cols, n, s)
        loss = total_loss(
            y_est, y, disc, cols, config.alpha, config.loss_norm
        )
        ad.backward(tape, loss)
        if zleaf.grad is None:
            continue
        zparams.zero_grads()
        zparams.accumulate_grad("z", zleaf.grad)
        adam_step(zparams, state.adam_z, config.lr_z)
        zt.assign_(project_clip(zt.data, config.clip_lo, config.clip_hi))
    return _eval_total_loss(state, config, gen, disc, y)


def _family_map(surrogate, config: SolverConfig, gen: Generator):
    if config.surrogate_family == "conv":
        return _conv_map(surrogate, gen.output_shape)
    return _mix_map(surrogate)


def _eval_data_loss(state, config, gen, y) -> float:
    n, s = y.shape[0], config.sources_per_obs
    tape = Tape()
    cols = tape.leaf(Tensor(_columns_values(gen, state.z.data)), constant=True)
    fmap = _family_map(state.surrogate, config, gen)
    y_est = fmap(cols, n, s)
    return _data_term(
        y_est, tape.leaf(Tensor(y), constant=True), config.loss_norm
    ).value.item()


def _eval_total_loss(state, config, gen, disc, y) -> float:
    data = _eval_data_loss(state, config, gen, y)
    if config.alpha == 0.0:
        return data
    cols = _columns_values(gen, state.z.data)
    return data + config.alpha * _perceptual_value(disc, cols)


# ---------------------------------------------------------------------------
# Full solve
# ---------------------------------------------------------------------------


def _resolve_checkpoint(checkpoint) -> tuple[Generator, Discriminator]:
    if isinstance(checkpoint, (str, os.PathLike)):
        return load_checkpoint(checkpoint)
    gen, disc = checkpoint
    return gen, disc


def _observation_stack(y_obs) -> np.ndarray:
    if isinstance(y_obs, ObservationSet):
        return y_obs.stacked()
    arr = [np.asarray(o, dtype=np.float64) for o in y_obs]
    if not arr:
        raise ValueError("need at least one observation")
    return np.stack(arr)


def _validate_shapes(config: SolverConfig, gen: Generator, y: np.ndarray) -> None:
    if config.n_observations is not None and config.n_observations != y.shape[0]:
        raise ConfigError(
            f"config expects {config.n_observations} observations, got {y.shape[0]}"
        )
    if config.surrogate_family == "conv":
        if config.sources_per_obs != 1:
            raise ConfigError("the conv surrogate takes exactly one source per observation")
        if tuple(y.shape[1:]) != tuple(gen.output_shape):
            raise ShapeMismatchError(
                f"observations {y.shape[1:]} do not match generator output "
                f"{gen.output_shape}"
            )
    else:
        m = int(np.prod(gen.output_shape))
        if y.ndim != 3 or y.shape[2] != m:
            raise ShapeMismatchError(
                f"mix observations must be [N, n_obs, {m}], got {y.shape}"
            )


def _build_surrogate(config: SolverConfig, gen: Generator, y: np.ndarray, rng: Pcg32):
    if config.surrogate_family == "conv":
        return build_conv_surrogate(
            gen.output_shape[0],
            rng,
            hidden=config.surrogate_hidden,
            ksize=config.surrogate_ksize,
            relu_hidden=config.surrogate_relu,
        )
    return build_mix_surrogate(
        config.sources_per_obs, y.shape[1], rng, hidden=config.surrogate_hidden
    )


def solve(
    config: SolverConfig, checkpoint, y_obs, rng: Pcg32, initial_surrogate=None
) -> RecoveryResult:
    """Run the full alternating recovery.

    ``checkpoint`` is a checkpoint path or a (generator, discriminator)
    pair; ``y_obs`` is an ObservationSet or a list of observation arrays.
    Latents are drawn first, then the surrogate weights, so two solves
    with the same seed are bit-identical.  ``initial_surrogate`` replaces
    the random surrogate init (warm starts; note it skips the surrogate's
    rng draws).
    """
    config.validate()
    gen, disc = _resolve_checkpoint(checkpoint)
    y = _observation_stack(y_obs)
    _validate_shapes(config, gen, y)

    z0 = init_latents(y.shape[0], config.sources_per_obs, gen.latent_dim, rng)
    state = SolverState(
        z=Tensor(z0),
        surrogate=(
            initial_surrogate
            if initial_surrogate is not None
            else _build_surrogate(config, gen, y, rng)
        ),
        adam_theta=AdamState(),
        adam_z=AdamState(),
    )
    initial_loss = _eval_total_loss(state, config, gen, disc, y)

    stall = 0
    prev = initial_loss
    for epoch in range(config.outer_epochs):
        try:
            after_surrogate = surrogate_phase(state, config, gen, disc, y)
            after_latent = latent_phase(state, config, gen, disc, y)
        except NumericalError as exc:
            raise NumericalError(
                f"solve diverged at epoch {epoch}: {exc}"
            ) from exc
        state.loss_history.append(
            {
                "epoch": epoch,
                "after_surrogate": after_surrogate,
                "after_latent": after_latent,
            }
        )
        if config.early_stop_tol is not None:
            rel = abs(prev - after_latent) / max(abs(prev), 1e-12)
            stall = stall + 1 if rel < config.early_stop_tol else 0
            if stall >= config.early_stop_patience:
                break
        prev = after_latent

    n, s = y.shape[0], config.sources_per_obs
    cols = _columns_values(gen, state.z.data)
    sources = np.ascontiguousarray(cols.T).reshape((n, s) + tuple(gen.output_shape))
    final_loss = (
        state.loss_history[-1]["after_latent"] if state.loss_history else initial_loss
    )
    return RecoveryResult(
        sources=sources,
        surrogate=state.surrogate,
        initial_loss=initial_loss,
        final_loss=final_loss,
        loss_history=state.loss_history,
        config=config,
        seed=rng.seed,
    )


# ---------------------------------------------------------------------------
# Shared projected-descent engine (the gradient baselines reuse this
# exact code path, so a frozen identity surrogate and the no-measurement
# baseline produce identical trajectories)
# ---------------------------------------------------------------------------


def latent_descent(
    gen: Generator,
    disc: Discriminator | None,
    y: np.ndarray,
    forward_map,
    n: int,
    s: int,
    steps: int,
    lr: float,
    alpha: float,
    clip_lo: float,
    clip_hi: float,
    z0: np.ndarray,
    adam: AdamState | None = None,
    loss_norm: str = "l1",
) -> tuple[np.ndarray, list[float]]:
    """Projected Adam descent on latents against a fixed forward map.

    ``forward_map(cols, n, s)`` turns generator columns into the stacked
    observation estimate.  Returns the final latents and the per-step loss
    trace (evaluated before each update).
    """
    zparams = ParameterSet()
    zt = zparams.add("z", Tensor(z0))
    adam = adam or AdamState()
    history = []
    for _ in range(steps):
        tape = Tape()
        zleaf = tape.leaf(zt)
        cols = _gen_columns(gen, zleaf, n, s)
        y_est = forward_map(cols, n, s)
        loss = total_loss(y_est, y, disc, cols, alpha, loss_norm)
        history.append(loss.value.item())
        ad.backward(tape, loss)
        if zleaf.grad is None:
            continue
        zparams.zero_grads()
        zparams.accumulate_grad("z", zleaf.grad)
        adam_step(zparams, adam, lr)
        zt.assign_(project_clip(zt.data, clip_lo, clip_hi))
    return zt.data, history


# ---------------------------------------------------------------------------
# Result serialization: JSON manifest + raw float32 payloads
# ---------------------------------------------------------------------------


def save_result(directory, result: RecoveryResult, extra: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "kind": "recovery",
        "config": asdict(result.config),
        "seed": result.seed,
        "initial_loss": result.initial_loss,
        "final_loss": result.final_loss,
        "loss_history": result.loss_history,
        "sources_shape": list(result.sources.shape),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, "sources.f32"), "wb") as fh:
        fh.write(result.sources.astype("<f4").tobytes())
    surrogate = result.surrogate
    with open(os.path.join(directory, "surrogate.gpri"), "wb") as fh:
        fh.write(write_network(surrogate.specs, surrogate.layers, 0))


def load_result(directory) -> RecoveryResult:
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    shape = tuple(manifest["sources_shape"])
    with open(os.path.join(directory, "sources.f32"), "rb") as fh:
        sources = np.frombuffer(fh.read(), "<f4").astype(np.float64).reshape(shape)
    with open(os.path.join(directory, "surrogate.gpri"), "rb") as fh:
        _, specs, layers = read_network(fh.read())
    cfg_fields = {f.name for f in SolverConfig.__dataclass_fields__.values()}
    config = SolverConfig(
        **{k: v for k, v in manifest["config"].items() if k in cfg_fields}
    )
    if config.surrogate_family == "conv":
        surrogate = ConvSurrogate(layers[0], layers[1], config.surrogate_relu)
    else:
        surrogate = MixSurrogate(layers[0], layers[1])
    return RecoveryResult(
        sources=sources,
        surrogate=surrogate,
        initial_loss=manifest["initial_loss"],
        final_loss=manifest["final_loss"],
        loss_history=manifest["loss_history"],
        config=config,
        seed=manifest["seed"],
    )
