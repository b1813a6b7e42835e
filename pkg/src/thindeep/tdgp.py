"""Two-layer thin-and-deep GP with collapsed variational inference.

The hidden layer is a Q x D matrix field ``W(x)`` whose entries are GPs
(row ``q`` shares an SE kernel with variance ``w_variance[q]`` and common ARD
lengthscales ``w_lengthscales``); the output layer is an SE GP on the images
``h(x) = W(x) x``. Inducing values of ``W`` get a mean-field Gaussian
posterior with one covariance per row; the output inducing posterior is
integrated out in closed form.

Convention: output inducing variables are scaled by ``1/sigma_f``, so
``K_u`` is the unit-variance Gram on ``Z_u``, ``E[K_fu] <= sigma_f`` and
``psi0 = n * sigma_f**2``. The bound is invariant to this scaling.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._jax import (
    JITTER,
    chol,
    chol_solve,
    inv_softplus,
    jax,
    jnp,
    logdet_chol,
    softplus,
    sqdist,
    tri_solve,
)
from .errors import ParameterError

__all__ = [
    "TdgpModel",
    "PsiStats",
    "QwMarginals",
    "qw_marginals",
    "psi_statistics",
    "psi1",
    "psi2",
    "collapsed_bound",
    "collapsed_elbo",
    "optimal_qu",
    "predict",
    "relevance_profile",
    "export_latent",
    "export_field",
]


class PsiStats(NamedTuple):
    psi0: jnp.ndarray
    psi1: jnp.ndarray
    psi2: jnp.ndarray


class QwMarginals(NamedTuple):
    """Per data row ``i`` and latent row ``q``: mean of ``w_iq`` (D-vector)
    and the scalar variance shared by its D independent entries."""

    mean: jnp.ndarray  # n x Q x D
    var: jnp.ndarray  # n x Q

    def cov(self):
        """Dense ``n x Q x D x D`` covariances (diagonal by construction)."""
        D = self.mean.shape[-1]
        return self.var[..., None, None] * jnp.eye(D)


# -- pure functions on a dict of constrained parameters ---------------------------


def _augment(X, bias):
    X = jnp.asarray(X, dtype=float)
    if bias:
        return jnp.concatenate([X, jnp.ones((X.shape[0], 1))], axis=1)
    return X


def _hidden_gram(p, jitter):
    Zs = p["Z_w"] / p["w_lengthscales"]
    C = jnp.exp(-0.5 * sqdist(Zs, Zs))
    return C, chol(C, jitter)


def _qv_cov(p):
    L = p["qv_chol"]
    return L @ jnp.swapaxes(L, -1, -2)


def _marginals(p, X, jitter=JITTER):
    """Sparse conditional of every hidden entry at the rows of ``X``."""
    C, Lc = _hidden_gram(p, jitter)
    Xs = jnp.asarray(X, dtype=float) / p["w_lengthscales"]
    c = jnp.exp(-0.5 * sqdist(Xs, p["Z_w"] / p["w_lengthscales"]))  # n x m
    A = chol_solve(Lc, c.T).T  # n x m
    mu = p["w_mean"]  # Q x Dm
    resid = p["qv_mean"] - mu[..., None]  # Q x Dm x m
    mean = mu[None] + jnp.einsum("nm,qdm->nqd", A, resid)
    S = _qv_cov(p)  # Q x m x m
    prior_part = 1.0 - jnp.sum(A * c, axis=1)  # n
    post_part = jnp.einsum("nm,qmk,nk->nq", A, S, A)
    var = p["w_variance"][None, :] * prior_part[:, None] + post_part
    return QwMarginals(mean, jnp.maximum(var, 0.0))


def _image_moments(X_mult, marg):
    """Mean and variance of ``w_iq^T x_i`` for every (i, q)."""
    m = jnp.einsum("nqd,nd->nq", marg.mean, X_mult)
    s = marg.var * jnp.sum(X_mult**2, axis=1)[:, None]
    return m, s


def _psi1(sf2, Z, m, s):
    den = s[:, None, :] + 1.0  # n x 1 x Q
    diff = m[:, None, :] - Z[None, :, :]  # n x m x Q
    logp = -0.5 * jnp.log(den) - 0.5 * diff**2 / den
    return jnp.sqrt(sf2) * jnp.exp(jnp.sum(logp, axis=-1))


def _psi2_batched(sf2, Z, m, s):
    zbar = 0.5 * (Z[:, None, :] + Z[None, :, :])  # m x m x Q
    dz = jnp.sum((Z[:, None, :] - Z[None, :, :]) ** 2, axis=-1)
    den = 2.0 * s + 1.0  # n x Q
    diff = m[:, None, None, :] - zbar[None]  # n x m x m x Q
    logp = -0.5 * jnp.log(den)[:, None, None, :] - diff**2 / den[:, None, None, :]
    return sf2 * jnp.exp(-0.25 * dz)[None] * jnp.exp(jnp.sum(logp, axis=-1))


def _psi(p, X, marg, batched=False):
    Xm = _augment(X, p["augment_bias"])
    m, s = _image_moments(Xm, marg)
    sf2 = p["output_variance"]
    P1 = _psi1(sf2, p["Z_u"], m, s)
    P2 = _psi2_batched(sf2, p["Z_u"], m, s)
    n = Xm.shape[0]
    if batched:
        return PsiStats(sf2 * jnp.ones(n), P1, P2)
    return PsiStats(n * sf2, P1, jnp.sum(P2, axis=0))


def _ku(Z):
    return jnp.exp(-0.5 * sqdist(Z, Z))


def collapsed_bound(psi: PsiStats, Ku, y, noise, jitter=JITTER):
    """Collapsed bound with the optimal ``q(u)`` plugged in.

    Evaluates::

        -(y'y + psi0 - tr(Ku^-1 Psi2)) / (2 s2) - n/2 ln(2 pi s2)
        + y' Psi1 Sigma^-1 Psi1' y / (2 s2) + m/2 ln s2
        - 1/2 ln|Sigma| + 1/2 ln|Ku|,          Sigma = s2 Ku + Psi2

    through ``B = I + L^-1 Psi2 L^-T / s2`` (``Ku = L L'``). Returns the value
    and a dict of its terms.
    """
    y = jnp.asarray(y, dtype=float).reshape(-1)
    n = y.shape[0]
    m = Ku.shape[0]
    L = chol(Ku, jitter)
    A = tri_solve(L, tri_solve(L, psi.psi2).T) / noise
    A = 0.5 * (A + A.T)
    LB = jnp.linalg.cholesky(jnp.eye(m) + A)
    b = tri_solve(L, psi.psi1.T @ y)
    c = tri_solve(LB, b) / noise
    terms = {
        "data_fit": -0.5 * jnp.dot(y, y) / noise,
        "normaliser": -0.5 * n * jnp.log(2.0 * jnp.pi * noise),
        "projection": 0.5 * jnp.dot(c, c),
        "log_det": -0.5 * logdet_chol(LB),
        "trace": -0.5 * (psi.psi0 / noise - jnp.trace(A)),
    }
    return sum(terms.values()), terms


def _kl_v(p, jitter=JITTER):
    C, Lc = _hidden_gram(p, jitter)
    m = C.shape[0]
    sw = p["w_variance"]  # Q
    Lq = p["qv_chol"]  # Q x m x m
    Dm = p["w_mean"].shape[1]
    # K_q = sw_q * C
    LcLq = jax.vmap(lambda B: tri_solve(Lc, B))(Lq)  # Q x m x m
    tr = jnp.sum(LcLq**2, axis=(1, 2)) / sw
    logdet_k = m * jnp.log(sw) + logdet_chol(Lc)
    logdet_q = logdet_chol(Lq)
    resid = p["qv_mean"] - p["w_mean"][..., None]  # Q x Dm x m
    Q = resid.shape[0]
    r = tri_solve(Lc, resid.reshape(-1, m).T)  # m x (Q*Dm)
    maha = jnp.sum(r.T.reshape(Q, Dm, m) ** 2, axis=(1, 2)) / sw
    per_row = 0.5 * (Dm * (tr - m + logdet_k - logdet_q) + maha)
    return jnp.sum(per_row)


def _elbo(p, X, y, jitter=JITTER):
    marg = _marginals(p, X, jitter)
    psi = _psi(p, X, marg)
    bound, terms = collapsed_bound(psi, _ku(p["Z_u"]), y, p["noise"], jitter)
    kl = _kl_v(p, jitter)
    terms = dict(terms, bound=bound, kl_v=kl)
    return bound - kl, terms


# -- parameter container ---------------------------------------------------------


POSITIVE = ("output_variance", "w_variance", "w_lengthscales", "noise")


@dataclass
class TdgpModel:
    """All trainable state of a two-layer TDGP (constrained values)."""

    output_variance: float
    w_variance: np.ndarray  # Q
    w_lengthscales: np.ndarray  # D
    w_mean: np.ndarray  # Q x Dm
    noise: float
    Z_u: np.ndarray  # m_u x Q
    Z_w: np.ndarray  # m_v x D
    qv_mean: np.ndarray  # Q x Dm x m_v
    qv_chol: np.ndarray  # Q x m_v x m_v, lower triangular
    augment_bias: bool = False
    qu_mean: np.ndarray | None = field(default=None, repr=False)
    qu_cov: np.ndarray | None = field(default=None, repr=False)

    kind = "tdgp"

    def __post_init__(self):
        for name in ("w_variance", "w_lengthscales", "w_mean", "Z_u", "Z_w", "qv_mean", "qv_chol"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.output_variance = float(self.output_variance)
        self.noise = float(self.noise)
        self.validate()

    def validate(self):
        Q, D, Dm = self.latent_dim, self.input_dim, self.w_mean.shape[1]
        if Dm != D + int(self.augment_bias):
            raise ParameterError(f"w_mean has {Dm} columns, expected {D + int(self.augment_bias)}")
        if self.w_variance.shape != (Q,) or self.Z_u.shape[1] != Q:
            raise ParameterError("latent dimension mismatch between w_variance / Z_u / w_mean")
        if self.qv_mean.shape != (Q, Dm, self.m_v):
            raise ParameterError(f"qv_mean shape {self.qv_mean.shape} != {(Q, Dm, self.m_v)}")
        if self.qv_chol.shape != (Q, self.m_v, self.m_v):
            raise ParameterError(f"qv_chol shape {self.qv_chol.shape}")
        if self.output_variance <= 0 or self.noise <= 0:
            raise ParameterError("variances must be positive")
        if np.any(self.w_variance < 0) or np.any(self.w_lengthscales <= 0):
            raise ParameterError("hidden kernel parameters must be positive")

    @property
    def input_dim(self):
        return self.Z_w.shape[1]

    @property
    def latent_dim(self):
        return self.w_mean.shape[0]

    @property
    def m_u(self):
        return self.Z_u.shape[0]

    @property
    def m_v(self):
        return self.Z_w.shape[0]

    # -- construction

    @classmethod
    def initialize(
        cls,
        X,
        latent_dim=None,
        m_u=50,
        m_v=25,
        seed=0,
        augment_bias=False,
        output_variance=1.0,
        w_variance=1.0,
        w_lengthscale=1.0,
        noise=0.01,
    ):
        """Prior-consistent starting point.

        Hidden prior mean is the identity block (first Q rows of I_D), so the
        initial model is close to a shallow SE GP. ``Z_u`` is k-means on the
        initial images, ``Z_w`` k-means on X, ``q(V)`` starts at the prior
        mean (plus N(0, 0.01) noise) with covariance ``0.1 K_v``.
        """
        from .data import kmeans_centres

        X = np.asarray(X, dtype=float)
        n, D = X.shape
        Q = D if latent_dim is None else int(latent_dim)
        rng = np.random.default_rng(seed)
        Dm = D + int(augment_bias)
        w_mean = np.eye(Q, Dm)
        Xm = np.hstack([X, np.ones((n, 1))]) if augment_bias else X
        Z_u = kmeans_centres(Xm @ w_mean.T, m_u, rng)
        Z_w = kmeans_centres(X, m_v, rng)
        ls = np.full(D, float(w_lengthscale))
        C = np.exp(-0.5 * np.asarray(sqdist(Z_w / ls, Z_w / ls)))
        Lc = np.linalg.cholesky(C + JITTER * np.eye(len(Z_w)))
        wv = np.full(Q, float(w_variance))
        qv_chol = np.sqrt(0.1 * wv)[:, None, None] * Lc[None]
        qv_mean = w_mean[..., None] + 0.1 * rng.standard_normal((Q, Dm, len(Z_w)))
        return cls(
            output_variance=output_variance,
            w_variance=wv,
            w_lengthscales=ls,
            w_mean=w_mean,
            noise=noise,
            Z_u=Z_u,
            Z_w=Z_w,
            qv_mean=qv_mean,
            qv_chol=qv_chol,
            augment_bias=augment_bias,
        )

    def constrained(self):
        """Dict of jnp arrays consumed by the pure functions of this module."""
        out = {
            k: jnp.asarray(getattr(self, k))
            for k in (
                "output_variance",
                "w_variance",
                "w_lengthscales",
                "w_mean",
                "noise",
                "Z_u",
                "Z_w",
                "qv_mean",
                "qv_chol",
            )
        }
        out["augment_bias"] = self.augment_bias
        return out

    # -- unconstrained view for optimisation

    def unconstrained(self):
        m = self.m_v
        il = np.tril_indices(m)
        raw_chol = self.qv_chol[:, il[0], il[1]].copy()
        diag_pos = np.flatnonzero(il[0] == il[1])
        raw_chol[:, diag_pos] = inv_softplus(np.maximum(self.qv_chol[:, il[0][diag_pos], il[0][diag_pos]], 1e-300))
        return {
            "output_variance": inv_softplus(self.output_variance),
            "w_variance": inv_softplus(self.w_variance),
            "w_lengthscales": inv_softplus(self.w_lengthscales),
            "w_mean": self.w_mean.copy(),
            "noise": inv_softplus(self.noise),
            "Z_u": self.Z_u.copy(),
            "Z_w": self.Z_w.copy(),
            "qv_mean": self.qv_mean.copy(),
            "qv_chol": raw_chol,
        }

    def constrain(self, u):
        """Map an unconstrained dict (jnp-traceable) to constrained parameters."""
        m = self.m_v
        il = np.tril_indices(m)
        diag_mask = jnp.asarray(il[0] == il[1])
        entries = jnp.where(diag_mask, softplus(u["qv_chol"]), u["qv_chol"])
        L = jnp.zeros((self.latent_dim, m, m)).at[:, il[0], il[1]].set(entries)
        return {
            "output_variance": softplus(u["output_variance"]),
            "w_variance": softplus(u["w_variance"]),
            "w_lengthscales": softplus(u["w_lengthscales"]),
            "w_mean": u["w_mean"],
            "noise": softplus(u["noise"]),
            "Z_u": u["Z_u"],
            "Z_w": u["Z_w"],
            "qv_mean": u["qv_mean"],
            "qv_chol": L,
            "augment_bias": self.augment_bias,
        }

    def with_unconstrained(self, u):
        c = self.constrain({k: jnp.asarray(v) for k, v in u.items()})
        vals = {k: np.asarray(v) for k, v in c.items() if k != "augment_bias"}
        vals["output_variance"] = float(vals["output_variance"])
        vals["noise"] = float(vals["noise"])
        return dataclasses.replace(self, **vals, qu_mean=None, qu_cov=None)

    def objective(self, X, y, jitter=JITTER):
        """Return ``u -> (-ELBO, terms)`` as a jax-traceable function."""
        X = jnp.asarray(X, dtype=float)
        y = jnp.asarray(y, dtype=float).reshape(-1)

        def neg_elbo(u):
            val, terms = _elbo(self.constrain(u), X, y, jitter)
            return -val, terms

        return neg_elbo

    # -- posterior

    def condition(self, X, y, jitter=JITTER):
        """Cache the optimal ``q(u)`` for the training data on a copy."""
        q = optimal_qu(self, psi_statistics(self, X, jitter=jitter), y, jitter)
        return dataclasses.replace(self, qu_mean=q.mean, qu_cov=q.cov)

    def predict(self, X_star, jitter=JITTER):
        return predict(self, X_star, jitter)

    def relevance(self):
        return relevance_profile(self)[0]

    # -- serialisation

    def to_dict(self):
        d = {
            "kind": self.kind,
            "augment_bias": self.augment_bias,
            "input_dim": self.input_dim,
            "latent_dim": self.latent_dim,
            "m_u": self.m_u,
            "m_v": self.m_v,
        }
        for f in dataclasses.fields(self):
            if f.name == "augment_bias":
                continue
            v = getattr(self, f.name)
            if v is None:
                continue
            d[f.name] = {"shape": list(np.shape(v)), "data": np.asarray(v).ravel().tolist()}
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {"augment_bias": bool(d["augment_bias"])}
        for f in dataclasses.fields(cls):
            if f.name in d and f.name != "augment_bias":
                arr = np.asarray(d[f.name]["data"], dtype=float).reshape(d[f.name]["shape"])
                kw[f.name] = arr
        return cls(**kw)


# -- public operations -----------------------------------------------------------


def qw_marginals(model: TdgpModel, X, jitter=JITTER) -> QwMarginals:
    return _marginals(model.constrained(), X, jitter)


def psi1(model: TdgpModel, X, marg: QwMarginals):
    p = model.constrained()
    m, s = _image_moments(_augment(X, model.augment_bias), marg)
    return _psi1(p["output_variance"], p["Z_u"], m, s)


def psi2(model: TdgpModel, X, marg: QwMarginals):
    p = model.constrained()
    m, s = _image_moments(_augment(X, model.augment_bias), marg)
    return jnp.sum(_psi2_batched(p["output_variance"], p["Z_u"], m, s), axis=0)


def psi_statistics(model: TdgpModel, X, marg=None, jitter=JITTER) -> PsiStats:
    p = model.constrained()
    if marg is None:
        marg = _marginals(p, X, jitter)
    return _psi(p, X, marg)


def collapsed_elbo(model: TdgpModel, X, y, jitter=JITTER):
    """ELBO value and a dict of its terms (``bound`` is the part with the
    optimal ``q(u)``, ``kl_v`` the hidden-layer KL)."""
    val, terms = _elbo(model.constrained(), jnp.asarray(X, dtype=float), y, jitter)
    return float(val), {k: float(v) for k, v in terms.items()}


def optimal_qu(model, psi: PsiStats, y, jitter=JITTER):
    """Optimal ``q(u) = N(Ku S^-1 Psi1' y, s2 Ku S^-1 Ku)``, ``S = s2 Ku + Psi2``.

    Returned as a :class:`GaussianDist` in the scaled-``u`` convention of
    this module.
    """
    from .gpcore import GaussianDist

    y = jnp.asarray(y, dtype=float).reshape(-1)
    s2 = model.noise
    Ku = np.asarray(_ku(jnp.asarray(model.Z_u))) + jitter * np.eye(model.m_u)
    L = np.linalg.cholesky(Ku)
    A = np.asarray(tri_solve(L, tri_solve(L, psi.psi2).T)) / s2
    LB = np.linalg.cholesky(np.eye(model.m_u) + 0.5 * (A + A.T))
    b = np.asarray(tri_solve(L, psi.psi1.T @ y)) / s2
    # mean = L B^-1 L^-1 Psi1'y / s2 ; cov = L B^-1 L'
    Binv_b = np.asarray(chol_solve(LB, b))
    mean = L @ Binv_b
    LBi_Lt = np.asarray(tri_solve(LB, L.T))
    cov = LBi_Lt.T @ LBi_Lt
    return GaussianDist(mean, 0.5 * (cov + cov.T))


def _predict_from_psi(P1, P2, psi0, Ku, mu_u, S_u, jitter):
    L = np.linalg.cholesky(Ku)
    a = np.asarray(chol_solve(L, mu_u))  # Ku^-1 mu
    mean = P1 @ a
    Kinv = np.asarray(chol_solve(L, np.eye(len(Ku))))
    M = Kinv - Kinv @ S_u @ Kinv  # Ku^-1 - Ku^-1 S Ku^-1
    var = (
        psi0
        - np.einsum("jk,njk->n", M, P2)
        + np.einsum("j,njk,k->n", a, P2, a)
        - mean**2
    )
    return mean, var


def predict(model: TdgpModel, X_star, jitter=JITTER, clamp=1e-12):
    """Moment-matched predictive at ``X_star``.

    Returns ``(mean, var_f, var_y, n_clamped)``: latent mean/variance,
    observed variance (``var_f + noise``) and how many latent variances were
    clamped up to ``clamp``.
    """
    if model.qu_mean is None:
        raise ParameterError("model has no cached q(u); call model.condition(X, y) first")
    p = model.constrained()
    X_star = jnp.asarray(X_star, dtype=float)
    marg = _marginals(p, X_star, jitter)
    ps = _psi(p, X_star, marg, batched=True)
    Ku = np.asarray(_ku(p["Z_u"])) + jitter * np.eye(model.m_u)
    mean, var = _predict_from_psi(
        np.asarray(ps.psi1), np.asarray(ps.psi2), np.asarray(ps.psi0), Ku,
        model.qu_mean, model.qu_cov, jitter,
    )
    n_clamped = int(np.sum(var < clamp))
    var = np.maximum(var, clamp)
    return mean, var, var + model.noise, n_clamped


def relevance_profile(model: TdgpModel):
    """Per-latent-row relevance, normalised to a maximum of 1.

    A row's raw relevance is its prior second moment per entry,
    ``w_variance[q] + |w_mean[q]|^2 / D``. Returns ``(relevance, parts)``
    where ``parts`` holds the kernel-variance and mean-norm components.
    """
    kv = np.asarray(model.w_variance, dtype=float)
    mn = np.sum(np.asarray(model.w_mean) ** 2, axis=1) / model.w_mean.shape[1]
    raw = kv + mn
    top = raw.max()
    rel = raw / top if top > 0 else np.zeros_like(raw)
    return rel, {"kernel_variance": kv, "mean_norm": mn, "raw": raw}


def export_latent(model: TdgpModel, grid, jitter=JITTER):
    """Posterior-mean images ``E[W(x)] x`` on the rows of ``grid`` (g x Q)."""
    p = model.constrained()
    grid = jnp.asarray(grid, dtype=float)
    marg = _marginals(p, grid, jitter)
    return np.asarray(jnp.einsum("nqd,nd->nq", marg.mean, _augment(grid, model.augment_bias)))


def export_field(model: TdgpModel, grid, jitter=JITTER):
    """Eigenvalues (descending) of ``E[W(x)]^T E[W(x)]`` per grid row."""
    p = model.constrained()
    marg = _marginals(p, jnp.asarray(grid, dtype=float), jitter)
    W = np.asarray(marg.mean)
    ev = np.linalg.eigvalsh(np.einsum("nqd,nqe->nde", W, W))
    return ev[:, ::-1]
