"""Universal detection of one outlying sequence among M continuous-valued sequences."""

from .distributions import Gaussian, TruncatedGaussian, Uniform
from .detectors import KL, ML, MMD, SequenceBatch, detect
from .kl_estimator import FixedCells, FixedPoints, SqrtN, estimate_kl
from .mmd_estimator import GaussianKernel, mmd2_unbiased
from .montecarlo import ExperimentConfig, estimate_error_curve, fit_exponent

__version__ = "0.1.0"

__all__ = [
    "Gaussian",
    "TruncatedGaussian",
    "Uniform",
    "KL",
    "ML",
    "MMD",
    "SequenceBatch",
    "detect",
    "SqrtN",
    "FixedCells",
    "FixedPoints",
    "estimate_kl",
    "GaussianKernel",
    "mmd2_unbiased",
    "ExperimentConfig",
    "estimate_error_curve",
    "fit_exponent",
]
