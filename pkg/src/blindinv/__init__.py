"""blindinv: joint recovery of unknown sources and an unknown measurement
process from observations alone, using a pre-trained generative prior and
a trainable shallow surrogate of the measurement."""

__version__ = "0.1.0"

from .errors import (
    BlindinvError,
    ConfigError,
    FormatError,
    NumericalError,
    ShapeMismatchError,
    UnderdeterminedError,
)
from .rng import Pcg32, splitmix64
from .autodiff import Tape, Tensor, backward, grad_check
from .gan import (
    GanConfig,
    Discriminator,
    Generator,
    build_discriminator,
    build_generator,
    gan_train,
    load_checkpoint,
    perceptual_loss,
    sample,
    save_checkpoint,
)
from .measurement import (
    ConvKernel,
    KernelOperator,
    MixingMatrix,
    MixingOperator,
    ObservationSet,
    add_noise,
    apply_kernel,
    edge_kernel,
    gaussian_kernel,
    load_observations,
    make_observations,
    mix_abs,
    sample_mixing,
    save_observations,
    toeplitz_of,
)
from .surrogate import (
    ConvSurrogate,
    MixSurrogate,
    build_conv_surrogate,
    build_mix_surrogate,
    effective_kernel,
    effective_kernel_single,
    surrogate_forward,
)
from .solver import (
    RecoveryResult,
    SolverConfig,
    SolverState,
    init_latents,
    latent_phase,
    load_result,
    project_clip,
    save_result,
    solve,
    surrogate_phase,
    total_loss,
)
from .baselines import (
    BaselineResult,
    FastIcaResult,
    dft2d,
    fastica,
    idft2d,
    naive_additive,
    pgd_known_forward,
    pgd_no_forward,
    wiener_deconvolve,
)
from .metrics import kernel_similarity, match_sources, mse, ncc, psnr
from .data import load_idx, load_pgm, save_pgm, synthetic_bars, write_idx
from .experiment import ExperimentConfig, run_experiment

__all__ = [name for name in dir() if not name.startswith("_")]
