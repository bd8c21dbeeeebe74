"""sonotrace: a desk-scale conditional diffusion toolkit for synthetic
tongue-contour video.

The package is organized as a plain numpy library: numerics and a minimal
reverse-mode autodiff, noise schedules and preconditioning, analytic and
learned denoisers, the stochastic churn sampler with cascade orchestration,
a synthetic dataset generator, a training loop, and distribution metrics.
"""

from .numerics import SeededRng, Tensor, derive_seed
from .schedule import NoiseSchedule, SigmaDistribution, precondition_coeffs, sigma_steps
from .conditioning import (
    ConditionBundle,
    ConditionSpec,
    EncoderParams,
    FusionWeights,
    SpeakerParams,
)
from .denoiser import (
    ConditionedDenoiser,
    DenoiserArch,
    GaussianOracle,
    GmmOracle,
    LearnedDenoiser,
    denoise,
    load_checkpoint,
    save_checkpoint,
)
from .sampler import CascadeSpec, SamplerParams, cascade_generate, churn_gamma, generate
from .dataset import Clip, Manifest, build_dataset, read_clip, synth_clip, write_clip
from .metrics import MetricsReport, evaluate, extract_features, frechet_distance, psnr, rmse
from .training import TrainConfig, train

__version__ = "0.1.0"
