"""Experiment orchestration: configs, scenario wiring, metrics CSV.

A JSON config file (flat keys, unknown keys rejected) drives three
scenarios at desk scale: ``deblur`` and ``edgemap`` (single-source
convolutional measurements, conv surrogate) and ``bss`` (multi-source
nonlinear mixtures, pixel-shared dense surrogate).

Every numeric output lands in ``metrics.csv`` with one row per
(item, method).  All outputs are a pure function of the config and
dataset bytes; wall-clock timings therefore go to a separate
``timings.log`` sidecar and the CSV's runtime_ms column is a fixed 0
placeholder.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .baselines import (
    BaselineResult,
    fastica,
    naive_additive,
    pgd_known_forward,
    pgd_no_forward,
    wiener_deconvolve,
)
from .data import load_idx, save_pgm, synthetic_bars
from .errors import ConfigError, UnderdeterminedError
from .gan import (
    GanConfig,
    build_discriminator,
    build_generator,
    gan_train,
    load_checkpoint,
    save_checkpoint,
)
from .measurement import (
    KernelOperator,
    MixingOperator,
    ObservationSet,
    edge_kernel,
    gaussian_kernel,
    load_observations,
    make_observations,
    sample_mixing,
    save_observations,
)
from .metrics import match_sources, mean_abs, mse, normalize_intensity, psnr
from .rng import Pcg32
from .solver import SolverConfig, save_result, solve

CSV_COLUMNS = (
    "scenario",
    "item",
    "method",
    "psnr",
    "mse",
    "l1",
    "final_loss",
    "seed",
    "runtime_ms",
)

SCENARIOS = ("deblur", "edgemap", "bss")
BASELINE_METHODS = ("pgd", "pgd_known", "wiener", "naive_additive", "ica")

# Fixed spawn indices for the per-purpose random sub-streams.
_STREAM_DATA = 0
_STREAM_OPERATOR = 1
_STREAM_NOISE = 2
_STREAM_SOLVER = 3
_STREAM_BASELINE = 4
_STREAM_GAN = 5


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int
    output_dir: str
    checkpoint: str
    dataset: str | None = None
    dataset_downsample_16: bool = False
    # observation synthesis
    n_observations: int = 25
    sources_per_obs: int = 1
    n_mixtures: int = 4
    kernel_size: int = 7
    kernel_sigma: float = 1.5
    noise_sigma: float = 0.0
    source_mode: str = "dataset"  # or "generator"
    observations: str | None = None  # stem to load instead of synthesizing
    # solver
    outer_epochs: int = 100
    surrogate_steps: int = 50
    latent_steps: int = 50
    lr_theta: float = 4e-3
    lr_z: float = 3e-4
    alpha: float = 1e-4
    clip_lo: float = -1.0
    clip_hi: float = 1.0
    loss_norm: str = "l1"
    surrogate_hidden: int = 16
    surrogate_ksize: int = 5
    surrogate_relu: bool = False
    early_stop_tol: float | None = None
    early_stop_patience: int = 5
    # baselines
    baselines: list = field(default_factory=list)
    baseline_steps: int | None = None
    wiener_k_reg: float = 1e-3
    # GAN training (train-gan command)
    gan_epochs: int = 60
    gan_batch: int = 32
    lr_g: float = 2e-4
    lr_d: float = 2e-4
    latent_dim: int = 100
    channels: int = 1
    image_size: int = 16
    gen_hidden: list = field(default_factory=lambda: [128, 256])
    disc_hidden: list = field(default_factory=lambda: [256, 128])
    emit_images: bool = True

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        missing = [k for k in ("scenario", "seed", "output_dir", "checkpoint") if k not in raw]
        if missing:
            raise ConfigError(f"missing required config keys: {', '.join(missing)}")
        config = cls(**raw)
        config.validate()
        return config

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(
                f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}"
            )
        bad = sorted(set(self.baselines) - set(BASELINE_METHODS))
        if bad:
            raise ConfigError(f"unknown baselines: {', '.join(bad)}")
        if self.scenario == "bss":
            if self.sources_per_obs < 1:
                raise ConfigError("bss needs sources_per_obs >= 1")
            if self.n_mixtures < 1:
                raise ConfigError("bss needs n_mixtures >= 1")
        elif self.sources_per_obs != 1:
            raise ConfigError(f"{self.scenario} uses exactly one source per observation")
        if self.source_mode not in ("dataset", "generator"):
            raise ConfigError(f"unknown source_mode {self.source_mode!r}")
        if self.n_observations < 1:
            raise ConfigError("n_observations must be >= 1")

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            outer_epochs=self.outer_epochs,
            surrogate_steps=self.surrogate_steps,
            latent_steps=self.latent_steps,
            lr_theta=self.lr_theta,
            lr_z=self.lr_z,
            alpha=self.alpha,
            clip_lo=self.clip_lo,
            clip_hi=self.clip_hi,
            sources_per_obs=self.sources_per_obs,
            n_observations=self.n_observations,
            loss_norm=self.loss_norm,
            surrogate_family="mix" if self.scenario == "bss" else "conv",
            surrogate_hidden=self.surrogate_hidden,
            surrogate_ksize=self.surrogate_ksize,
            surrogate_relu=self.surrogate_relu,
            early_stop_tol=self.early_stop_tol,
            early_stop_patience=self.early_stop_patience,
        )

    def gan_config(self) -> GanConfig:
        return GanConfig(
            latent_dim=self.latent_dim,
            image_shape=(self.channels, self.image_size, self.image_size),
            gen_hidden=tuple(self.gen_hidden),
            disc_hidden=tuple(self.disc_hidden),
        )

    def pgd_steps(self) -> int:
        if self.baseline_steps is not None:
            return self.baseline_steps
        return self.outer_epochs * self.latent_steps


# ---------------------------------------------------------------------------
# Data and operators
# ---------------------------------------------------------------------------


def load_dataset(config: ExperimentConfig) -> np.ndarray:
    """Dataset images [n,1,H,W] in [-1,1]: an IDX file, or the built-in
    ``synthetic-bars:<count>`` distribution (seeded from the experiment)."""
    if config.dataset is None:
        raise ConfigError("this command needs a dataset")
    if config.dataset.startswith("synthetic-bars:"):
        count = int(config.dataset.split(":", 1)[1])
        return synthetic_bars(count, Pcg32(config.seed).spawn(_STREAM_DATA),
                              size=config.image_size)
    if not os.path.exists(config.dataset):
        raise FileNotFoundError(f"dataset not found: {config.dataset}")
    return load_idx(config.dataset, downsample_16=config.dataset_downsample_16)


def make_operator(config: ExperimentConfig, rng: Pcg32):
    if config.scenario == "deblur":
        return KernelOperator(
            gaussian_kernel(config.kernel_size, config.kernel_sigma), "gaussian_blur"
        )
    if config.scenario == "edgemap":
        return KernelOperator(edge_kernel(), "edge")
    return MixingOperator(
        sample_mixing(config.sources_per_obs, config.n_mixtures, rng)
    )


def _gather_sources(config: ExperimentConfig, gen) -> list[np.ndarray]:
    """Per-observation source stacks: [C,H,W] images for the kernel
    scenarios, flattened [S, M] stacks for bss."""
    n, s = config.n_observations, config.sources_per_obs
    if config.source_mode == "generator":
        rng = Pcg32(config.seed).spawn(_STREAM_DATA)
        z = rng.uniform(-1.0, 1.0, (n * s, gen.latent_dim))
        images = gen.sample_batch(z)
    else:
        images = load_dataset(config)
        if images.shape[0] < n * s:
            raise ConfigError(
                f"dataset holds {images.shape[0]} images; scenario needs {n * s}"
            )
        if images.shape[1:] != tuple(gen.output_shape):
            raise ConfigError(
                f"dataset images {images.shape[1:]} do not match generator "
                f"output {gen.output_shape}"
            )
        images = images[: n * s]
    if config.scenario == "bss":
        m = int(np.prod(images.shape[1:]))
        return [images[j * s : (j + 1) * s].reshape(s, m) for j in range(n)]
    return [images[j] for j in range(n)]


def synthesize_observations(config: ExperimentConfig, gen) -> ObservationSet:
    root = Pcg32(config.seed)
    operator = make_operator(config, root.spawn(_STREAM_OPERATOR))
    sources = _gather_sources(config, gen)
    return make_observations(
        sources,
        operator,
        config.n_observations,
        rng=root.spawn(_STREAM_NOISE),
        noise_sigma=config.noise_sigma,
        seed=config.seed,
    )


def _resolve_observations(config: ExperimentConfig, gen) -> ObservationSet:
    if config.observations is not None:
        return load_observations(config.observations)
    stem = os.path.join(config.output_dir, "observations")
    if os.path.exists(stem + ".json"):
        return load_observations(stem)
    obs = synthesize_observations(config, gen)
    save_observations(stem, obs)
    return obs


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def _truth_stack(config: ExperimentConfig, obs: ObservationSet, shape) -> np.ndarray | None:
    if obs.source_refs is None:
        return None
    refs = obs.source_refs
    n, s = refs.shape[0], config.sources_per_obs
    return refs.reshape((n, s) + tuple(shape))


def _rows_for(
    config: ExperimentConfig,
    method: str,
    estimates: np.ndarray,  # [N, S, C, H, W]
    truth: np.ndarray | None,  # same shape
    final_losses,  # scalar or per-item list
    seed: int,
) -> list[dict]:
    rows = []
    n = estimates.shape[0]
    for j in range(n):
        row = {
            "scenario": config.scenario,
            "item": j,
            "method": method,
            "psnr": float("nan"),
            "mse": float("nan"),
            "l1": float("nan"),
            "final_loss": float(
                final_losses[j] if np.ndim(final_losses) else final_losses
            ),
            "seed": seed,
            "runtime_ms": 0,
        }
        if truth is not None:
            if config.scenario == "bss":
                # BSS scores are permutation-matched on intensity-normalized
                # sources; mse is the headline per-source matched score.
                pairs = _matched_pairs(estimates[j], truth[j])
                row["mse"] = float(np.mean([mse(e, t) for e, t in pairs]))
                row["psnr"] = float(np.mean([psnr(e, t, peak=4.0) for e, t in pairs]))
                row["l1"] = float(np.mean([mean_abs(e, t) for e, t in pairs]))
            else:
                row["psnr"] = psnr(estimates[j, 0], truth[j, 0])
                row["mse"] = mse(estimates[j, 0], truth[j, 0])
                row["l1"] = mean_abs(estimates[j, 0], truth[j, 0])
        rows.append(row)
    return rows


def _matched_pairs(est_sources, truth_sources):
    """Normalized (est, truth) pairs under the best permutation."""
    perm, _ = match_sources(list(est_sources), list(truth_sources))
    return [
        (normalize_intensity(est_sources[perm[i]]), normalize_intensity(truth_sources[i]))
        for i in range(len(perm))
    ]


def write_csv(path, rows: list[dict]) -> None:
    lines = [",".join(CSV_COLUMNS)]
    for row in rows:
        lines.append(
            ",".join(_format_cell(row[col]) for col in CSV_COLUMNS)
        )
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _format_cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def train_gan_command(config: ExperimentConfig) -> int:
    data = load_dataset(config)
    rng = Pcg32(config.seed).spawn(_STREAM_GAN)
    gen = build_generator(config.gan_config(), rng)
    disc = build_discriminator(config.gan_config(), rng)
    log = gan_train(
        gen, disc, data, config.gan_epochs, config.gan_batch,
        config.lr_g, config.lr_d, rng,
    )
    os.makedirs(os.path.dirname(os.path.abspath(config.checkpoint)), exist_ok=True)
    save_checkpoint(config.checkpoint, gen, disc)
    os.makedirs(config.output_dir, exist_ok=True)
    with open(os.path.join(config.output_dir, "gan_training_log.json"), "w") as fh:
        json.dump(log, fh, indent=2)
        fh.write("\n")
    return 0


def observe_command(config: ExperimentConfig) -> int:
    gen, _ = _load_gan(config)
    os.makedirs(config.output_dir, exist_ok=True)
    obs = synthesize_observations(config, gen)
    save_observations(os.path.join(config.output_dir, "observations"), obs)
    return 0


def _load_gan(config: ExperimentConfig):
    if not os.path.exists(config.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {config.checkpoint}")
    return load_checkpoint(config.checkpoint)


def run_experiment(config: ExperimentConfig, methods: list[str] | None = None) -> int:
    """Solve and/or run baselines against one observation set, then write
    metrics.csv, result payloads, and (optionally) PGM images."""
    config.validate()
    gen, disc = _load_gan(config)
    os.makedirs(config.output_dir, exist_ok=True)
    obs = _resolve_observations(config, gen)
    if methods is None:
        methods = ["solve"] + list(config.baselines)

    truth = _truth_stack(config, obs, gen.output_shape)
    rows: list[dict] = []
    timings: list[str] = []
    for method in methods:
        started = time.perf_counter()
        rows.extend(_run_method(config, method, gen, disc, obs, truth))
        elapsed_ms = int(1000 * (time.perf_counter() - started))
        timings.append(f"method={method} wall_ms={elapsed_ms}")
    write_csv(os.path.join(config.output_dir, "metrics.csv"), rows)
    with open(os.path.join(config.output_dir, "timings.log"), "w") as fh:
        fh.write("\n".join(timings) + "\n")
    return 0


def _run_method(config, method, gen, disc, obs, truth) -> list[dict]:
    if method == "solve":
        result = solve(
            config.solver_config(),
            (gen, disc),
            obs,
            Pcg32(config.seed).spawn(_STREAM_SOLVER),
        )
        rows = _rows_for(
            config, "solve", result.sources, truth, result.final_loss, result.seed
        )
        out_dir = os.path.join(config.output_dir, "solve")
        save_result(
            out_dir,
            result,
            extra={"scenario": config.scenario, "metrics": _aggregate_metrics(rows)},
        )
        _emit_images(config, out_dir, result.sources, truth, obs)
        return rows
    if method in ("pgd", "pgd_known", "naive_additive"):
        result = _run_gradient_baseline(config, method, gen, disc, obs)
        rows = _rows_for(
            config, method, result.sources, truth, result.final_loss, result.seed
        )
        result.metrics = _aggregate_metrics(rows)
        out_dir = os.path.join(config.output_dir, method)
        _save_baseline(out_dir, config, result)
        _emit_images(config, out_dir, result.sources, truth, obs)
        return rows
    if method == "wiener":
        return _run_wiener(config, gen, obs, truth)
    if method == "ica":
        return _run_ica(config, gen, obs, truth)
    raise ConfigError(f"unknown method {method!r}")


def _aggregate_metrics(rows: list[dict]) -> dict:
    """Per-method means over items; NaNs become nulls for strict JSON."""
    out = {}
    for key in ("psnr", "mse", "l1"):
        vals = [r[key] for r in rows if not np.isnan(r[key])]
        out[f"mean_{key}"] = float(np.mean(vals)) if vals else None
    return out


def _json_float(value: float):
    return None if np.isnan(value) else float(value)


def _run_gradient_baseline(config, method, gen, disc, obs) -> BaselineResult:
    rng = Pcg32(config.seed).spawn(_STREAM_BASELINE)
    steps = config.pgd_steps()
    common = dict(
        steps=steps,
        lr=config.lr_z,
        alpha=config.alpha,
        rng=rng,
        clip_lo=config.clip_lo,
        clip_hi=config.clip_hi,
        loss_norm=config.loss_norm,
    )
    if method == "pgd":
        return pgd_no_forward(gen, disc, obs, **common)
    if method == "naive_additive":
        return naive_additive(gen, disc, obs, config.sources_per_obs, **common)
    operator = make_operator(config, Pcg32(config.seed).spawn(_STREAM_OPERATOR))
    return pgd_known_forward(gen, disc, obs, operator, **common)


def _run_wiener(config, gen, obs, truth) -> list[dict]:
    if config.scenario not in ("deblur", "edgemap"):
        raise ConfigError("wiener deconvolution applies to kernel scenarios only")
    operator = make_operator(config, Pcg32(config.seed).spawn(_STREAM_OPERATOR))
    estimates = np.stack(
        [
            wiener_deconvolve(y, operator.kernel, config.wiener_k_reg)
            for y in obs.observations
        ]
    )[:, None]  # [N, 1, C, H, W]
    rows = _rows_for(config, "wiener", estimates, truth, float("nan"), config.seed)
    out_dir = os.path.join(config.output_dir, "wiener")
    _save_baseline(
        out_dir,
        config,
        BaselineResult(
            method="wiener",
            sources=estimates,
            initial_loss=float("nan"),
            final_loss=float("nan"),
            seed=config.seed,
            metrics=_aggregate_metrics(rows),
        ),
    )
    _emit_images(config, out_dir, estimates, truth, obs)
    return rows


def _run_ica(config, gen, obs, truth) -> list[dict]:
    if config.scenario != "bss":
        raise ConfigError("ica applies to the bss scenario only")
    shape = tuple(gen.output_shape)
    rng = Pcg32(config.seed).spawn(_STREAM_BASELINE)
    estimates = []
    warnings = []
    for j, y in enumerate(obs.observations):
        try:
            result = fastica(y, config.sources_per_obs, rng=rng)
        except UnderdeterminedError:
            raise
        if not result.converged:
            warnings.append(f"item {j}: fastica hit the iteration cap")
        estimates.append(result.components.reshape((config.sources_per_obs,) + shape))
    estimates = np.stack(estimates)
    rows = _rows_for(config, "ica", estimates, truth, float("nan"), config.seed)
    out_dir = os.path.join(config.output_dir, "ica")
    _save_baseline(
        out_dir,
        config,
        BaselineResult(
            method="ica",
            sources=estimates,
            initial_loss=float("nan"),
            final_loss=float("nan"),
            seed=config.seed,
            metrics=_aggregate_metrics(rows),
            warnings=warnings,
        ),
    )
    _emit_images(config, out_dir, estimates, truth, obs)
    return rows


def _save_baseline(directory, config, result: BaselineResult) -> None:
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "kind": "baseline",
        "method": result.method,
        "scenario": config.scenario,
        "seed": result.seed,
        "initial_loss": _json_float(result.initial_loss),
        "final_loss": _json_float(result.final_loss),
        "sources_shape": list(result.sources.shape),
        "metrics": result.metrics,
        "warnings": result.warnings,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(directory, "sources.f32"), "wb") as fh:
        fh.write(result.sources.astype("<f4").tobytes())


def _emit_images(config, out_dir, estimates, truth, obs) -> None:
    if not config.emit_images or config.channels != 1:
        return
    os.makedirs(out_dir, exist_ok=True)
    n, s = estimates.shape[0], estimates.shape[1]
    size = config.image_size
    for j in range(n):
        for i in range(s):
            img = estimates[j, i].reshape(1, size, size)
            save_pgm(os.path.join(out_dir, f"item{j:03d}_src{i}.pgm"), img)
    if truth is not None and not os.path.exists(
        os.path.join(config.output_dir, "truth_item000_src0.pgm")
    ):
        for j in range(truth.shape[0]):
            for i in range(truth.shape[1]):
                img = truth[j, i].reshape(1, size, size)
                save_pgm(
                    os.path.join(config.output_dir, f"truth_item{j:03d}_src{i}.pgm"),
                    img,
                )


def evaluate_command(result_dir) -> int:
    """Recompute metrics.csv for a finished experiment directory from the
    stored observation set and method payloads."""
    manifest_path = os.path.join(result_dir, "observations.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"no observations manifest under {result_dir}")
    # Re-read the experiment config echo from any method manifest.
    rows: list[dict] = []
    obs = load_observations(os.path.join(result_dir, "observations"))
    for method in ("solve",) + BASELINE_METHODS:
        mdir = os.path.join(result_dir, method)
        mpath = os.path.join(mdir, "manifest.json")
        if not os.path.exists(mpath):
            continue
        with open(mpath) as fh:
            manifest = json.load(fh)
        shape = tuple(manifest["sources_shape"])
        with open(os.path.join(mdir, "sources.f32"), "rb") as fh:
            est = np.frombuffer(fh.read(), "<f4").astype(np.float64).reshape(shape)
        scenario = manifest.get("scenario", "deblur")
        seed = manifest.get("seed", obs.seed)
        final_loss = manifest.get("final_loss")
        if final_loss is None:
            final_loss = float("nan")
        pseudo = ExperimentConfig(
            scenario=scenario,
            seed=seed,
            output_dir=result_dir,
            checkpoint="",
            sources_per_obs=shape[1],
            n_observations=shape[0],
        )
        truth = None
        if obs.source_refs is not None:
            truth = obs.source_refs.reshape(shape)
        rows.extend(_rows_for(pseudo, method, est, truth, final_loss, seed))
    write_csv(os.path.join(result_dir, "metrics.csv"), rows)
    for row in _aggregate(rows):
        print(row)
    return 0


def _aggregate(rows) -> list[str]:
    by_method: dict[str, list[dict]] = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(row)
    out = []
    for method in sorted(by_method):
        group = by_method[method]
        vals = [r["psnr"] for r in group if not np.isnan(r["psnr"])]
        mean_psnr = float(np.mean(vals)) if vals else float("nan")
        out.append(
            f"{method}: items={len(group)} mean_psnr={mean_psnr:.3f}"
        )
    return out
