"""Stochastic local-winner-takes-all networks with IBP architecture sampling.

Library layout:

- ``autodiff``: float64 tensors with reverse-mode differentiation
- ``stochastic``: reparameterized samplers and analytic KL terms
- ``layers``: LWTA dense/conv layers, IBP-masked output, plain baselines
- ``model``: declarative specs, network assembly, Table-style presets
- ``codes``: error-correcting output codes, heads, decoding, ensembles
- ``train``: ELBO training loop, evaluation, checkpoints
- ``attacks``: FGSM, PGD, random-confidence, DeepFool, DCT-subspace margins
- ``data``: IDX/CIFAR loaders, augmentation, synthetic fixtures
- ``analysis``: winner statistics, logit trajectories, sparsity, CSV export
- ``cli``: train/eval/attack/analyze entry points
"""

from . import autodiff, stochastic, layers, model, codes, train, attacks, data, analysis

__all__ = [
    "autodiff", "stochastic", "layers", "model", "codes",
    "train", "attacks", "data", "analysis",
]

__version__ = "0.1.0"
