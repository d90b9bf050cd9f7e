"""Sparse information-form Laplace posteriors for small neural networks.

Layer-wise Fisher estimators (Diag, KFAC, EFB and the diagonally corrected
INF form), Kronecker-preserving spectral sparsification, and a Woodbury
sampler whose cubic work is confined to the retained rank.
"""

__version__ = "0.1.0"

from .fisher import KronEigenbasis, build_eigenbasis  # noqa: E402
from .net import NetworkSpec, TrainConfig, train_map  # noqa: E402
from .posterior import PosteriorConfig, build_posterior, predict_linearized, predict_mc  # noqa: E402
from .sampler import SamplerState, build_sampler, draw  # noqa: E402
from .sparse import SparseInfoForm, check_validity, sparsify_eigenbasis, spectral_sparsify  # noqa: E402

__all__ = [
    "KronEigenbasis",
    "NetworkSpec",
    "PosteriorConfig",
    "SamplerState",
    "SparseInfoForm",
    "TrainConfig",
    "build_eigenbasis",
    "build_posterior",
    "build_sampler",
    "check_validity",
    "draw",
    "predict_linearized",
    "predict_mc",
    "sparsify_eigenbasis",
    "spectral_sparsify",
    "train_map",
]
