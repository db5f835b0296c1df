"""Unsupervised identification of spiral-track events.

Simulate spiral-track events with noise, preprocess them into 2-D
charge images, cluster them via multi-restart k-means on latent
features and via a mixture-of-autoencoders model, and evaluate
clusterings against ground-truth labels.
"""

from . import fileio, harness, latent, metrics, mixae, neuralcore, pipeline, simkit
from .errors import ContractError, FileFormatError, NumericError, StageError
from .seeding import derive_seed, rng_for

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "FileFormatError",
    "NumericError",
    "StageError",
    "derive_seed",
    "rng_for",
    "fileio",
    "harness",
    "latent",
    "metrics",
    "mixae",
    "neuralcore",
    "pipeline",
    "simkit",
]
