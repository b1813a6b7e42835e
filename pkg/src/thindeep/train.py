"""Full-batch Adam on the negative collapsed ELBO with a phased schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._jax import inv_softplus, jax, jnp
from .errors import TrainingError

log = logging.getLogger(__name__)

__all__ = [
    "Phase",
    "Schedule",
    "DEFAULT_SCHEDULE",
    "ParamVector",
    "AdamState",
    "adam_step",
    "FitResult",
    "fit",
]


@dataclass(frozen=True)
class Phase:
    epochs: int
    step_size: float
    frozen: frozenset = frozenset()
    # values assigned (constrained scale) at the start of the phase
    fixed: tuple = ()

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epoch count must be >= 0, got {self.epochs}")
        if not self.step_size > 0:
            raise ValueError(f"step size must be > 0, got {self.step_size}")


@dataclass(frozen=True)
class Schedule:
    phases: tuple

    def __post_init__(self):
        if not self.phases:
            raise ValueError("schedule needs at least one phase")

    @property
    def total_epochs(self):
        return sum(p.epochs for p in self.phases)

    @classmethod
    def standard(cls, epochs=(500, 1500, 5000), step_sizes=(0.1, 0.01, 0.001), noise=0.01):
        """Three phases; the likelihood variance is pinned to ``noise`` and
        frozen for the first two, trainable in the third."""
        e1, e2, e3 = epochs
        l1, l2, l3 = step_sizes
        fixed = (("noise", noise),)
        return cls(
            (
                Phase(e1, l1, frozenset({"noise"}), fixed),
                Phase(e2, l2, frozenset({"noise"}), fixed),
                Phase(e3, l3, frozenset()),
            )
        )


DEFAULT_SCHEDULE = Schedule.standard()


class ParamVector:
    """Flat view of a dict of arrays with a name registry."""

    def __init__(self, names, shapes):
        self.names = tuple(names)
        self.shapes = tuple(tuple(s) for s in shapes)
        sizes = [int(np.prod(s)) for s in self.shapes]
        offs = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.slices = {n: slice(offs[i], offs[i + 1]) for i, n in enumerate(self.names)}
        self.size = int(offs[-1])

    @classmethod
    def like(cls, d):
        names = sorted(d)
        return cls(names, [np.shape(d[n]) for n in names])

    def flatten(self, d):
        xp = jnp if any(isinstance(d[n], jax.Array) for n in self.names) else np
        return xp.concatenate([xp.ravel(xp.asarray(d[n], dtype=float)) for n in self.names])

    def unflatten(self, flat):
        return {n: flat[self.slices[n]].reshape(s) for n, s in zip(self.names, self.shapes)}

    def mask(self, frozen):
        m = np.ones(self.size)
        for n in frozen:
            if n in self.slices:
                m[self.slices[n]] = 0.0
        return m

    def name_at(self, index):
        for n, s in self.slices.items():
            if s.start <= index < s.stop:
                return n
        raise IndexError(index)


class AdamState(NamedTuple):
    m: np.ndarray
    v: np.ndarray
    t: int

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(params, grad, state: AdamState, step_size, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; works on numpy or jax arrays (and under ``jit``).

    Entries with zero gradient since the start of the run keep zero moments and
    are left bit-identical.
    """
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    return params - step_size * mhat / (jnp.sqrt(vhat) + eps), AdamState(m, v, t)


@dataclass
class FitResult:
    model: object
    trace: list = field(default_factory=list)  # dicts: epoch, phase, elbo, terms...

    def trace_rows(self):
        keys = ["epoch", "phase", "elbo"]
        extra = sorted({k for r in self.trace for k in r} - set(keys))
        return keys + extra, [[r.get(k) for k in keys + extra] for r in self.trace]


def _make_step(objective, pv):
    def loss(flat):
        return objective(pv.unflatten(flat))

    vg = jax.value_and_grad(loss, has_aux=True)

    @jax.jit
    def step(flat, m, v, t, lr, mask):
        (val, terms), g = vg(flat)
        g = g * mask
        new, st = adam_step(flat, g, AdamState(m, v, t), lr)
        return new, st.m, st.v, val, terms, g

    return step


def fit(model, X, y, schedule: Schedule = DEFAULT_SCHEDULE, seed=0, log_every=500):
    """Optimise ``model`` on ``(X, y)``; returns a :class:`FitResult` whose
    model has its optimal ``q(u)`` cached.

    One epoch is one full-batch gradient step. Adam moments are reset at each
    phase boundary. ``seed`` is accepted for interface symmetry; the loop
    itself is deterministic.
    """
    del seed
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    u = model.unconstrained()
    pv = ParamVector.like(u)
    step = _make_step(model.objective(X, y), pv)
    flat = jnp.asarray(pv.flatten(u))
    trace = []
    epoch = 0
    last_good = flat
    for k, phase in enumerate(schedule.phases):
        if phase.epochs == 0:
            continue
        for name, value in phase.fixed:
            if name in pv.slices:
                flat = flat.at[pv.slices[name]].set(jnp.asarray(inv_softplus(value)).ravel())
        mask = jnp.asarray(pv.mask(phase.frozen))
        m = jnp.zeros(pv.size)
        v = jnp.zeros(pv.size)
        for t in range(phase.epochs):
            new, m, v, val, terms, g = step(flat, m, v, t, phase.step_size, mask)
            val = float(val)
            if not np.isfinite(val):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}",
                    last_good=model.with_unconstrained(pv.unflatten(np.asarray(last_good))),
                    epoch=epoch,
                )
            bad = ~np.isfinite(np.asarray(g))
            if bad.any():
                raise TrainingError(
                    f"non-finite gradient for {pv.name_at(int(np.flatnonzero(bad)[0]))!r} at epoch {epoch}",
                    last_good=model.with_unconstrained(pv.unflatten(np.asarray(last_good))),
                    epoch=epoch,
                )
            row = {"epoch": epoch, "phase": k + 1, "elbo": -val}
            row.update({kk: float(vv) for kk, vv in terms.items()})
            trace.append(row)
            last_good = flat
            flat = new
            if log_every and epoch % log_every == 0:
                log.info("epoch %d phase %d elbo %.4f", epoch, k + 1, -val)
            epoch += 1
    if epoch == 0:
        trained = model
    else:
        trained = model.with_unconstrained(pv.unflatten(np.asarray(flat)))
    return FitResult(trained.condition(X, y), trace)
