"""Empirical-Bayes image restoration with a latent-space plug-and-play ULA."""

from .calibration import CalibratorConfig, CalibratorState, rho_gradient, sapg_update
from .config import ExperimentConfig, load_config
from .denoisers import (
    AnalyticGaussianDenoiser,
    DdpmChainDenoiser,
    EquivariantDenoiser,
    GaussianScoreBackend,
    chain_denoise,
    ddpm_step,
)
from .errors import (
    ConfigError,
    DivergenceError,
    LatentPnPError,
    MissingFileError,
    RangeError,
    ShapeError,
    SolverError,
)
from .experiment import run_experiment
from .metrics import psnr, ssim
from .operators import Blur, Downsample, Mask, Observation, SolverConfig, degrade, operator_norm, posterior_x_mean
from .rng import RngStream
from .sampler import SamplerConfig, default_step_size, rao_blackwell_estimate, run_sampler
from .schedule import TimestepRule, build_schedule, timestep_for_noise
from .synthetic import generate_test_image

__version__ = "0.1.0"
