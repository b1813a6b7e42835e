"""Random small models and brute-force oracles shared by the test modules."""

import numpy as np

from thindeep._jax import JITTER
from thindeep.tdgp import QwMarginals, TdgpModel


def random_model(rng, D=2, Q=2, m_u=3, m_v=3, augment_bias=False, w_scale=0.6):
    Dm = D + int(augment_bias)
    m_v_chol = np.tril(rng.normal(size=(Q, m_v, m_v)) * 0.2)
    idx = np.arange(m_v)
    m_v_chol[:, idx, idx] = rng.uniform(0.3, 0.8, size=(Q, m_v))
    return TdgpModel(
        output_variance=rng.uniform(0.5, 2.0),
        w_variance=rng.uniform(0.2, 1.0, size=Q),
        w_lengthscales=rng.uniform(0.7, 1.5, size=D),
        w_mean=np.eye(Q, Dm) + w_scale * rng.normal(size=(Q, Dm)),
        noise=rng.uniform(0.05, 0.3),
        Z_u=rng.normal(size=(m_u, Q)),
        Z_w=rng.normal(size=(m_v, D)),
        qv_mean=rng.normal(size=(Q, Dm, m_v)),
        qv_chol=m_v_chol,
        augment_bias=augment_bias,
    )


def prior_matched(model, w_variance, jitter=JITTER):
    """Copy of ``model`` whose q(V) equals the prior of V (so the KL is 0)."""
    import dataclasses

    Zs = model.Z_w / model.w_lengthscales
    d2 = np.sum((Zs[:, None] - Zs[None]) ** 2, axis=-1)
    Lc = np.linalg.cholesky(np.exp(-0.5 * d2) + jitter * np.eye(model.m_v))
    wv = np.broadcast_to(np.asarray(w_variance, dtype=float), (model.latent_dim,)).copy()
    return dataclasses.replace(
        model,
        w_variance=wv,
        qv_mean=np.repeat(model.w_mean[..., None], model.m_v, axis=-1),
        qv_chol=np.sqrt(wv)[:, None, None] * Lc[None],
        qu_mean=None,
        qu_cov=None,
    )


def deterministic_marginals(W, n):
    """Zero-variance marginals with the same mean matrix ``W`` (Q x Dm) at every row."""
    W = np.asarray(W, dtype=float)
    return QwMarginals(np.broadcast_to(W, (n,) + W.shape).copy(), np.zeros((n, W.shape[0])))


def sample_images(marg, X_mult, rng, size):
    """Draws of ``h_i = w_i x_i`` from independent Gaussian marginals; shape (size, n, Q)."""
    mean = np.asarray(marg.mean)
    var = np.asarray(marg.var)
    eps = rng.standard_normal((size,) + mean.shape)
    W = mean[None] + np.sqrt(var)[None, :, :, None] * eps
    return np.einsum("snqd,nd->snq", W, X_mult)


def exact_lml(K, y, noise):
    C = K + noise * np.eye(len(y))
    L = np.linalg.cholesky(C)
    a = np.linalg.solve(L, y)
    return float(-0.5 * a @ a - np.sum(np.log(np.diag(L))) - 0.5 * len(y) * np.log(2 * np.pi))
