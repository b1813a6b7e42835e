"""Thin-and-deep Gaussian processes: locally-linear deformation kernels,
collapsed variational inference for two-layer models, deep prior samplers
and an experiment harness."""

from . import _jax  # noqa: F401  (enables float64 in jax)

__version__ = "0.1.0"
