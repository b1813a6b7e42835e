"""Small jax helpers shared by the differentiable models."""

import jax

jax.config.update("jax_enable_x64", True)

import jax.numpy as jnp  # noqa: E402
from jax.scipy.linalg import cho_solve, solve_triangular  # noqa: E402

# constant jitter inside differentiable code; the escalating ladder in
# gpcore.robust_cholesky is not traceable
JITTER = 1e-6


def softplus(x):
    return jnp.logaddexp(x, 0.0)


def inv_softplus(y):
    import numpy as np

    y = np.asarray(y, dtype=float)
    return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


def sqdist(A, B):
    d2 = jnp.sum(A**2, -1)[:, None] + jnp.sum(B**2, -1)[None, :] - 2.0 * A @ B.T
    return jnp.maximum(d2, 0.0)


def chol(A, jitter=JITTER):
    n = A.shape[-1]
    return jnp.linalg.cholesky(A + jitter * jnp.eye(n))


def chol_solve(L, B):
    return cho_solve((L, True), B)


def tri_solve(L, B):
    return solve_triangular(L, B, lower=True)


def logdet_chol(L):
    return 2.0 * jnp.sum(jnp.log(jnp.diagonal(L, axis1=-2, axis2=-1)), axis=-1)


__all__ = [
    "jax",
    "jnp",
    "JITTER",
    "softplus",
    "inv_softplus",
    "sqdist",
    "chol",
    "chol_solve",
    "tri_solve",
    "logdet_chol",
]
