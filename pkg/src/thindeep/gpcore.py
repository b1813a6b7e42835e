"""Shared Gaussian machinery: jittered Cholesky, Gaussian KL, sparse
conditionals and exact GP sampling on point sets."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import NumericalError, ParameterError
from .kernels import gram

log = logging.getLogger(__name__)

JITTER_LEVELS = (0.0,) + tuple(10.0**k for k in range(-8, -1))


def robust_cholesky(A, return_jitter=False):
    """Lower Cholesky factor of ``A + eps*I``.

    ``eps`` starts at 0 and escalates through 1e-8, 1e-7, ..., 1e-2 until the
    factorisation succeeds. Raises :class:`NumericalError` past 1e-2.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ParameterError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericalError("matrix contains non-finite entries")
    A = 0.5 * (A + A.T)
    eye = np.eye(A.shape[0])
    for eps in JITTER_LEVELS:
        try:
            L = np.linalg.cholesky(A + eps * eye)
        except np.linalg.LinAlgError:
            continue
        if eps > 0:
            log.debug("cholesky needed jitter %.0e", eps)
        return (L, eps) if return_jitter else L
    w = np.linalg.eigvalsh(A)
    raise NumericalError(
        f"cholesky failed at max jitter {JITTER_LEVELS[-1]:.0e}",
        diagnostics={
            "shape": A.shape,
            "min_eig": float(w[0]),
            "max_eig": float(w[-1]),
            "max_abs": float(np.max(np.abs(A))),
        },
    )


@dataclass
class GaussianDist:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise ParameterError(
                f"covariance shape {self.cov.shape} does not match mean {self.mean.shape}"
            )
        if not np.allclose(self.cov, self.cov.T, atol=1e-10):
            raise ParameterError("covariance is not symmetric")

    @property
    def dim(self):
        return self.mean.size

    @cached_property
    def chol(self):
        return robust_cholesky(self.cov)

    def logpdf(self, x):
        x = np.atleast_2d(x)
        L = self.chol
        r = solve_triangular(L, (x - self.mean).T, lower=True)
        return (
            -0.5 * np.sum(r**2, axis=0)
            - np.sum(np.log(np.diag(L)))
            - 0.5 * self.dim * np.log(2 * np.pi)
        )


@dataclass
class InducingSet:
    pseudo_inputs: np.ndarray
    kernel: object

    def __post_init__(self):
        self.pseudo_inputs = np.atleast_2d(np.asarray(self.pseudo_inputs, dtype=float))
        if self.pseudo_inputs.shape[0] < 1:
            raise ParameterError("inducing set needs at least one point")
        if not np.all(np.isfinite(self.pseudo_inputs)):
            raise ParameterError("pseudo-inputs must be finite")

    @property
    def size(self):
        return self.pseudo_inputs.shape[0]


def gaussian_kl(q: GaussianDist, p: GaussianDist):
    """KL(q || p) between two multivariate normals."""
    if q.dim != p.dim:
        raise ParameterError(f"dimension mismatch {q.dim} vs {p.dim}")
    try:
        Lp = np.linalg.cholesky(p.cov)
    except np.linalg.LinAlgError:
        raise NumericalError("prior covariance is singular") from None
    Lq = q.chol
    A = solve_triangular(Lp, Lq, lower=True)
    r = solve_triangular(Lp, q.mean - p.mean, lower=True)
    kl = 0.5 * (
        np.sum(A**2)
        + r @ r
        - q.dim
        + 2 * np.sum(np.log(np.diag(Lp)))
        - 2 * np.sum(np.log(np.diag(Lq)))
    )
    return max(float(kl), 0.0)


def _cross(kernel, A, B):
    if hasattr(kernel, "matrix"):
        return kernel.matrix(A, B)
    return np.array([[kernel(a, b) for b in B] for a in A])


def _diag(kernel, A):
    if hasattr(kernel, "matrix"):
        return np.array([kernel.matrix(a[None])[0, 0] for a in A])
    return np.array([kernel(a, a) for a in A])


def sparse_conditional(x_star, inducing: InducingSet, q: GaussianDist, prior_mean=None):
    """Marginals of ``int p(f(x*) | v) q(v) dv`` at each row of ``x_star``.

    Returns ``(mean, var)``; variances below zero from round-off are clamped.
    """
    X = np.atleast_2d(np.asarray(x_star, dtype=float))
    Z = inducing.pseudo_inputs
    k = inducing.kernel
    mfun = prior_mean if prior_mean is not None else (lambda P: np.zeros(len(P)))
    Kzz = gram(Z, k)
    L = robust_cholesky(Kzz)
    Kxz = _cross(k, X, Z)
    A = cho_solve((L, True), Kxz.T).T  # n x m, K_xz K_zz^{-1}
    mean = mfun(X) + A @ (q.mean - mfun(Z))
    kxx = _diag(k, X)
    var = kxx - np.einsum("ij,jk,ik->i", A, Kzz - q.cov, A)
    return mean, np.maximum(var, 0.0)


def sample_gp(points, kernel, mean=None, seed=None, size=None):
    """Draw from ``N(mean(points), K + eps*I)``.

    The jitter ladder is applied to the Gram matrix normalised by its mean
    diagonal, so tiny-variance priors stay tiny.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    K = gram(X, kernel)
    scale = float(np.mean(np.diag(K)))
    if not scale > 0:
        raise NumericalError("Gram matrix has non-positive diagonal")
    L = np.sqrt(scale) * robust_cholesky(K / scale)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    shape = (X.shape[0],) if size is None else (size, X.shape[0])
    eps = rng.standard_normal(shape)
    mu = np.zeros(X.shape[0]) if mean is None else np.asarray(mean(X), dtype=float)
    return mu + eps @ L.T
