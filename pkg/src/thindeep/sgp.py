"""Shallow sparse GP regression (collapsed bound, ARD SE kernel).

Used as the baseline in the synthetic benchmark; shares the bound with
:mod:`thindeep.tdgp` by treating ``K_fu`` as deterministic Psi-statistics.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from ._jax import JITTER, inv_softplus, jnp, softplus, sqdist
from .errors import ParameterError
from .tdgp import PsiStats, _predict_from_psi, collapsed_bound, optimal_qu


def _kfu(p, X):
    Xs = X / p["lengthscales"]
    Zs = p["Z"] / p["lengthscales"]
    return jnp.sqrt(p["variance"]) * jnp.exp(-0.5 * sqdist(Xs, Zs))


def _ku(p):
    Zs = p["Z"] / p["lengthscales"]
    return jnp.exp(-0.5 * sqdist(Zs, Zs))


def _psi(p, X):
    K = _kfu(p, X)
    return PsiStats(X.shape[0] * p["variance"], K, K.T @ K)


@dataclass
class SparseGP:
    variance: float
    lengthscales: np.ndarray
    noise: float
    Z: np.ndarray
    qu_mean: np.ndarray | None = field(default=None, repr=False)
    qu_cov: np.ndarray | None = field(default=None, repr=False)

    kind = "sgp-shallow"

    def __post_init__(self):
        self.lengthscales = np.asarray(self.lengthscales, dtype=float)
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=float))
        self.variance = float(self.variance)
        self.noise = float(self.noise)
        if self.variance <= 0 or self.noise <= 0 or np.any(self.lengthscales <= 0):
            raise ParameterError("variance, noise and lengthscales must be positive")
        if self.Z.shape[1] != self.lengthscales.size:
            raise ParameterError("Z and lengthscales disagree on input dimension")

    @property
    def input_dim(self):
        return self.Z.shape[1]

    @property
    def m_u(self):
        return self.Z.shape[0]

    @classmethod
    def initialize(cls, X, m_u=50, seed=0, variance=1.0, lengthscale=1.0, noise=0.01):
        from .data import kmeans_centres

        X = np.asarray(X, dtype=float)
        Z = kmeans_centres(X, m_u, np.random.default_rng(seed))
        return cls(variance, np.full(X.shape[1], float(lengthscale)), noise, Z)

    def constrained(self):
        return {
            "variance": jnp.asarray(self.variance),
            "lengthscales": jnp.asarray(self.lengthscales),
            "noise": jnp.asarray(self.noise),
            "Z": jnp.asarray(self.Z),
        }

    def unconstrained(self):
        return {
            "variance": inv_softplus(self.variance),
            "lengthscales": inv_softplus(self.lengthscales),
            "noise": inv_softplus(self.noise),
            "Z": self.Z.copy(),
        }

    def constrain(self, u):
        return {
            "variance": softplus(u["variance"]),
            "lengthscales": softplus(u["lengthscales"]),
            "noise": softplus(u["noise"]),
            "Z": u["Z"],
        }

    def with_unconstrained(self, u):
        c = {k: np.asarray(v) for k, v in self.constrain({k: jnp.asarray(v) for k, v in u.items()}).items()}
        return dataclasses.replace(
            self,
            variance=float(c["variance"]),
            lengthscales=c["lengthscales"],
            noise=float(c["noise"]),
            Z=c["Z"],
            qu_mean=None,
            qu_cov=None,
        )

    def elbo(self, X, y, jitter=JITTER):
        p = self.constrained()
        X = jnp.asarray(X, dtype=float)
        val, terms = collapsed_bound(_psi(p, X), _ku(p), y, p["noise"], jitter)
        return float(val), {k: float(v) for k, v in dict(terms, bound=val, kl_v=0.0).items()}

    def objective(self, X, y, jitter=JITTER):
        X = jnp.asarray(X, dtype=float)
        y = jnp.asarray(y, dtype=float).reshape(-1)

        def neg_elbo(u):
            p = self.constrain(u)
            val, terms = collapsed_bound(_psi(p, X), _ku(p), y, p["noise"], jitter)
            return -val, dict(terms, bound=val, kl_v=jnp.zeros(()))

        return neg_elbo

    def condition(self, X, y, jitter=JITTER):
        p = self.constrained()
        X = jnp.asarray(X, dtype=float)
        # optimal_qu only needs noise, m_u and the Gram on Z; give it a view
        # whose Z is already scaled by the lengthscales.
        view = _QuView(self.noise, np.asarray(self.Z / self.lengthscales))
        q = optimal_qu(view, _psi(p, X), y, jitter)
        return dataclasses.replace(self, qu_mean=q.mean, qu_cov=q.cov)

    def predict(self, X_star, jitter=JITTER, clamp=1e-12):
        if self.qu_mean is None:
            raise ParameterError("model has no cached q(u); call condition(X, y) first")
        p = self.constrained()
        X_star = jnp.asarray(X_star, dtype=float)
        K = np.asarray(_kfu(p, X_star))
        P2 = K[:, :, None] * K[:, None, :]
        Ku = np.asarray(_ku(p)) + jitter * np.eye(self.m_u)
        mean, var = _predict_from_psi(
            K, P2, np.full(len(K), self.variance), Ku, self.qu_mean, self.qu_cov, jitter
        )
        n_clamped = int(np.sum(var < clamp))
        var = np.maximum(var, clamp)
        return mean, var, var + self.noise, n_clamped

    def relevance(self):
        """Inverse lengthscales normalised to a maximum of 1."""
        inv = 1.0 / self.lengthscales
        return inv / inv.max()

    def to_dict(self):
        d = {"kind": self.kind, "input_dim": self.input_dim, "m_u": self.m_u}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is not None:
                d[f.name] = {"shape": list(np.shape(v)), "data": np.asarray(v).ravel().tolist()}
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {}
        for f in dataclasses.fields(cls):
            if f.name in d:
                kw[f.name] = np.asarray(d[f.name]["data"], dtype=float).reshape(d[f.name]["shape"])
        return cls(**kw)


@dataclass
class _QuView:
    noise: float
    Z_u: np.ndarray

    @property
    def m_u(self):
        return self.Z_u.shape[0]
