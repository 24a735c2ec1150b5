"""Dense hierarchical VAE on dyadic images."""

from .config import ConfigError, HvaeConfig
from .model import (
    ElboBreakdown,
    HvaeError,
    HvaeParams,
    LogvarRangeError,
    NormProbe,
    UnsupportedError,
    backward,
    boundary_kl,
    collapsed_fraction,
    elbo_mc_timesteps,
    forward,
    forward_backward,
    fourier_features,
    gaussian_kl,
    grad,
    init_params,
    kl_cumsum,
    residual_norm_probe,
    sample,
)
