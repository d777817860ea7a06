"""Quadratic-interaction Gibbs models with external fields.

A library and experiment runner for high-temperature mean-field theory
and Gaussian-limit checks of linear statistics: tilted single-site
measures, coupling-matrix norms and regime certificates, the mean-field
fixed point, Glauber dynamics with an exactly enumerable ground truth,
and random ensembles (complete graph, random graphs, graphons, pattern
covariances) with matching field and contrast recipes.
"""

from . import coupling, ensembles, measures, meanfield, sampler
from .cltlab import run_clt_experiment
from .model import ModelInstance, make_model

__version__ = "0.1.0"

__all__ = [
    "ModelInstance",
    "make_model",
    "run_clt_experiment",
    "coupling",
    "ensembles",
    "measures",
    "meanfield",
    "sampler",
    "__version__",
]
