"""Compound trainable activations and the models built on them.

Modules:

* activations -- base stochastic units and the compound activation.
* pdf_estimation -- univariate density fitting through a monotone map.
* rbm -- restricted Boltzmann machines over mixture units.
* dbn -- stacked RBMs with a free-energy classifier and fine-tuning.
* autoenc -- a small dense auto-encoder with compound activations.
* data -- IDX loading, dithering, batching and model persistence.
* cli -- command-line entry points.
"""

from tcanet.activations import (
    BaseKind,
    TcaParams,
    base_cdf,
    base_deriv,
    base_deriv2,
    base_eval,
    base_logpartition,
    base_sample,
    tca_deriv,
    tca_eval,
    tca_grads,
    tca_logpartition,
    tca_mixture_cdf,
    tca_sample,
)
from tcanet.config import TrainConfig

__all__ = [
    "BaseKind",
    "TcaParams",
    "TrainConfig",
    "base_cdf",
    "base_deriv",
    "base_deriv2",
    "base_eval",
    "base_logpartition",
    "base_sample",
    "tca_deriv",
    "tca_eval",
    "tca_grads",
    "tca_logpartition",
    "tca_mixture_cdf",
    "tca_sample",
]

__version__ = "0.1.0"
