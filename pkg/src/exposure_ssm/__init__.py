"""Bayesian state-space models for occupational exposure assessment.

Physical exposure models (one-zone, two-zone, eddy diffusion) embedded in
linear-Gaussian and log-scale non-Gaussian state-space models, fitted by
Gibbs / Metropolis-within-Gibbs sampling and compared by posterior
predictive loss.
"""
__version__ = "0.1.0"

from .statespace import (  # noqa: E402
    MeasurementSeries,
    ModelSetup,
    NumericalError,
    PosteriorSamples,
    PriorSpec,
)

__all__ = [
    "__version__",
    "MeasurementSeries",
    "ModelSetup",
    "NumericalError",
    "PosteriorSamples",
    "PriorSpec",
]
