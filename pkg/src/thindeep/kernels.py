"""Covariance functions: squared exponential, lengthscale mixtures and the
locally-linear (TDGP) deformation kernel.

Everything here is plain numpy and side-effect free. Kernels are small frozen
dataclasses that are callable on a pair of points, so they can be handed to
:func:`gram` or evaluated directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericalError, ParameterError

__all__ = [
    "SeParams",
    "IsotropicProfile",
    "ConstantField",
    "FunctionField",
    "GridField",
    "TdgpField",
    "LinearDeformation",
    "LocallyLinearDeformation",
    "SEKernel",
    "LengthscaleMixtureKernel",
    "DeformationKernel",
    "TdgpKernel",
    "se_kernel",
    "lengthscale_mixture_kernel",
    "lmx_distance",
    "tdgp_kernel",
    "tdgp_distance",
    "derivative_variance_1d",
    "gram",
    "sq_dist",
]


def sq_dist(A, B):
    """Pairwise squared Euclidean distances between rows of ``A`` and ``B``.

    Round-off negatives are clamped at zero.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d2 = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    return np.maximum(d2, 0.0)


def _check_pd(mat, what="lengthscale matrix"):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape[0] != mat.shape[1]:
        raise ParameterError(f"{what} must be square, got shape {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-12, rtol=1e-10):
        raise ParameterError(f"{what} is not symmetric")
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        raise ParameterError(f"{what} is not positive definite") from None


@dataclass(frozen=True)
class SeParams:
    """Signal variance and lengthscale matrix of a squared-exponential kernel.

    In ARD mode only the diagonal of the lengthscale matrix is stored (as
    ``log_diag``); otherwise the Cholesky factor of the full matrix is kept.
    Use :meth:`ard` / :meth:`full` / :meth:`isotropic` to construct.
    """

    variance: float
    log_diag: np.ndarray | None = None
    chol: np.ndarray | None = None

    def __post_init__(self):
        if not np.isfinite(self.variance) or self.variance <= 0:
            raise ParameterError(f"variance must be > 0, got {self.variance}")
        if (self.log_diag is None) == (self.chol is None):
            raise ParameterError("exactly one of log_diag / chol must be given")

    @classmethod
    def ard(cls, variance, diag):
        diag = np.atleast_1d(np.asarray(diag, dtype=float))
        if np.any(~np.isfinite(diag)) or np.any(diag <= 0):
            raise ParameterError("ARD lengthscale matrix entries must be > 0")
        return cls(float(variance), log_diag=np.log(diag))

    @classmethod
    def full(cls, variance, matrix):
        return cls(float(variance), chol=_check_pd(matrix))

    @classmethod
    def isotropic(cls, variance, lengthscale, dim):
        return cls.ard(variance, np.full(dim, float(lengthscale) ** 2))

    @property
    def dim(self):
        return len(self.log_diag) if self.log_diag is not None else self.chol.shape[0]

    @property
    def lengthscale_matrix(self):
        if self.log_diag is not None:
            return np.diag(np.exp(self.log_diag))
        return self.chol @ self.chol.T

    def mahalanobis_sq(self, r):
        """Return ``r^T Delta^{-1} r`` for a difference vector (or rows of ``r``)."""
        r = np.asarray(r, dtype=float)
        if self.log_diag is not None:
            return np.sum(r**2 * np.exp(-self.log_diag), axis=-1)
        from scipy.linalg import solve_triangular

        s = solve_triangular(self.chol, np.atleast_2d(r).T, lower=True)
        out = np.sum(s**2, axis=0)
        return out[0] if r.ndim == 1 else out


@dataclass(frozen=True)
class IsotropicProfile:
    """The squared-exponential profile ``pi(d2) = variance * exp(-d2 / 2)``."""

    variance: float = 1.0
    kind: str = "se"

    def __post_init__(self):
        if self.kind != "se":
            raise ParameterError(f"unsupported profile kind {self.kind!r}")
        if not self.variance > 0:
            raise ParameterError(f"variance must be > 0, got {self.variance}")

    def __call__(self, d2):
        return self.variance * np.exp(-0.5 * np.maximum(d2, 0.0))


# -- lengthscale fields ------------------------------------------------------


@dataclass(frozen=True)
class ConstantField:
    matrix: np.ndarray

    def __post_init__(self):
        _check_pd(self.matrix)

    def __call__(self, x):
        return np.atleast_2d(np.asarray(self.matrix, dtype=float))


@dataclass(frozen=True)
class FunctionField:
    """Wraps an arbitrary callable ``x -> Delta(x)``."""

    fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        return np.atleast_2d(np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float))


@dataclass(frozen=True)
class GridField:
    """Lengthscale matrices given at grid points; nearest grid point wins."""

    points: np.ndarray
    matrices: np.ndarray

    def __post_init__(self):
        if len(self.points) != len(self.matrices):
            raise ParameterError("points and matrices differ in length")
        for m in self.matrices:
            _check_pd(m)

    def __call__(self, x):
        x = np.asarray(x, dtype=float).reshape(1, -1)
        idx = int(np.argmin(sq_dist(x, np.atleast_2d(self.points))[0]))
        return np.atleast_2d(self.matrices[idx])


@dataclass(frozen=True)
class TdgpField:
    """Lengthscale field ``[W(x)^T W(x)]^{-1}`` induced by a W-field.

    Pseudo-inverse is used, so rank-deficient W (pruned rows) is allowed;
    :meth:`eigenvalues` returns the spectrum of ``W^T W`` and never inverts.
    """

    w_fn: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x):
        W = np.atleast_2d(self.w_fn(np.asarray(x, dtype=float)))
        return np.linalg.pinv(W.T @ W, hermitian=True)

    def eigenvalues(self, x):
        W = np.atleast_2d(self.w_fn(np.asarray(x, dtype=float)))
        return np.sort(np.linalg.eigvalsh(W.T @ W))[::-1]


# -- deformations ------------------------------------------------------------


@dataclass(frozen=True)
class LinearDeformation:
    W: np.ndarray

    @property
    def out_dim(self):
        return np.atleast_2d(self.W).shape[0]

    def __call__(self, x):
        return np.atleast_2d(self.W) @ np.asarray(x, dtype=float)


@dataclass(frozen=True)
class LocallyLinearDeformation:
    """``x -> W(x) x`` for a matrix-valued ``w_fn`` with ``out_dim`` rows."""

    w_fn: Callable[[np.ndarray], np.ndarray]
    out_dim: int

    def matrix(self, x):
        W = np.atleast_2d(np.asarray(self.w_fn(np.asarray(x, dtype=float)), dtype=float))
        if W.shape[0] != self.out_dim:
            raise ParameterError(
                f"W(x) has {W.shape[0]} rows, deformation declares {self.out_dim}"
            )
        return W

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.matrix(x) @ x

    def field(self):
        return TdgpField(self.matrix)


# -- pointwise kernels ---------------------------------------------------------


def se_kernel(a, b, p: SeParams):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    if a.shape != b.shape or a.shape[0] != p.dim:
        raise ParameterError(f"shape mismatch: {a.shape}, {b.shape}, dim={p.dim}")
    return p.variance * np.exp(-0.5 * p.mahalanobis_sq(a - b))


def lmx_distance(a, b, field):
    """Squared distance ``2 r^T (Delta(a) + Delta(b))^{-1} r`` with ``r = a - b``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    S = field(a) + field(b)
    r = a - b
    try:
        c = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericalError("Delta(a) + Delta(b) is singular") from None
    s = np.linalg.solve(c, r)
    return 2.0 * float(s @ s)


def lengthscale_mixture_kernel(a, b, field, profile: IsotropicProfile):
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    Da, Db = field(a), field(b)
    _, lda = np.linalg.slogdet(Da)
    _, ldb = np.linalg.slogdet(Db)
    sign, ldm = np.linalg.slogdet(0.5 * (Da + Db))
    if sign <= 0:
        raise NumericalError("Delta(a) + Delta(b) is singular")
    pre = np.exp(0.25 * lda + 0.25 * ldb - 0.5 * ldm)
    return pre * profile(lmx_distance(a, b, field))


def tdgp_distance(a, b, deformation):
    """Euclidean distance between deformation images; a proper metric."""
    return float(np.sqrt(np.sum((deformation(a) - deformation(b)) ** 2)))


def tdgp_kernel(a, b, deformation, profile: IsotropicProfile):
    ta = deformation(np.asarray(a, dtype=float))
    tb = deformation(np.asarray(b, dtype=float))
    if ta.shape != tb.shape:
        raise ParameterError(f"image shape mismatch {ta.shape} vs {tb.shape}")
    return profile(np.sum((ta - tb) ** 2))


def derivative_variance_1d(kind, x, lengthscale, dlengthscale=None):
    """Variance of ``f'(x)`` under a zero-mean unit-variance 1D SE-based prior.

    ``lengthscale`` and ``dlengthscale`` are callables giving ``l(x)`` and
    ``l'(x)``; the derivative may be omitted for ``"stationary"``.

    * stationary: ``1 / l^2``
    * lmx: ``(2 + l'^2) / (2 l^2)``
    * tdgp: ``(l - x l')^2 / l^4``
    """
    ell = float(lengthscale(x))
    if not ell > 0:
        raise ParameterError(f"lengthscale must be > 0 at x={x}, got {ell}")
    if kind == "stationary":
        return 1.0 / ell**2
    dl = float(dlengthscale(x))
    if kind == "lmx":
        return (2.0 + dl**2) / (2.0 * ell**2)
    if kind == "tdgp":
        return (ell - x * dl) ** 2 / ell**4
    raise ParameterError(f"unknown kernel kind {kind!r}")


# -- kernel objects --------------------------------------------------------------


@dataclass(frozen=True)
class SEKernel:
    params: SeParams

    def __call__(self, a, b):
        return se_kernel(a, b, self.params)

    @property
    def variance(self):
        return self.params.variance

    def matrix(self, A, B=None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = A if B is None else np.atleast_2d(np.asarray(B, dtype=float))
        p = self.params
        if p.log_diag is not None:
            s = np.exp(-0.5 * p.log_diag)
            d2 = sq_dist(A * s, B * s)
        else:
            from scipy.linalg import solve_triangular

            d2 = sq_dist(
                solve_triangular(p.chol, A.T, lower=True).T,
                solve_triangular(p.chol, B.T, lower=True).T,
            )
        return p.variance * np.exp(-0.5 * d2)


@dataclass(frozen=True)
class LengthscaleMixtureKernel:
    field: object
    profile: IsotropicProfile = field(default_factory=IsotropicProfile)

    def __call__(self, a, b):
        return lengthscale_mixture_kernel(a, b, self.field, self.profile)


@dataclass(frozen=True)
class DeformationKernel:
    """Stationary SE profile applied to the images of an arbitrary deformation."""

    deformation: object
    profile: IsotropicProfile = field(default_factory=IsotropicProfile)

    def __call__(self, a, b):
        return tdgp_kernel(a, b, self.deformation, self.profile)

    def matrix(self, A, B=None):
        TA = np.array([self.deformation(a) for a in np.atleast_2d(A)])
        TB = TA if B is None else np.array([self.deformation(b) for b in np.atleast_2d(B)])
        return self.profile(sq_dist(TA, TB))


@dataclass(frozen=True)
class TdgpKernel(DeformationKernel):
    """Deformation kernel whose warp is locally linear, ``x -> W(x) x``."""

    def __post_init__(self):
        if not isinstance(self.deformation, (LocallyLinearDeformation, LinearDeformation)):
            raise ParameterError("TdgpKernel needs a (locally) linear deformation")


def gram(points, kernel):
    """Gram matrix of ``kernel`` on the rows of ``points``.

    Kernels exposing a vectorised ``matrix`` method use it; otherwise the
    upper triangle is filled pairwise and mirrored.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if hasattr(kernel, "matrix"):
        K = kernel.matrix(X)
        return 0.5 * (K + K.T)
    n = X.shape[0]
    K = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            K[i, j] = K[j, i] = kernel(X[i], X[j])
    return K
