"""Depth-L prior samplers for compositional and thin-and-deep GPs.

Every layer is drawn jointly on the grid (exact multivariate normal draws).
Each GP row owns an RNG stream keyed by ``(seed, layer, row)`` so results
are reproducible regardless of evaluation order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError
from .gpcore import robust_cholesky
from .kernels import sq_dist

MAX_GRID = 512
KINDS = ("cdgp", "tdgp", "tdgp-augmented")
MEAN_MODES = ("zero", "linear-identity")

# offsets that separate the RNG streams of W entries from those of d rows
_W_STREAM = 1_000
_F_STREAM = 999


@dataclass(frozen=True)
class DepthConfig:
    """Architecture of a depth-``L`` prior.

    ``variances``/``lengthscales`` have one entry per layer (the last one is
    the output GP) or a single value broadcast to all layers. ``widths`` are
    the hidden widths ``Q_1..Q_{L-1}`` (default: input dimension).
    ``w_variance`` is the W-block kernel variance of the augmented mode and
    ``variances`` then applies to its d-block.
    """

    depth: int = 1
    kind: str = "cdgp"
    mean_mode: str = "zero"
    variances: tuple = (1.0,)
    lengthscales: tuple = (1.0,)
    widths: tuple | None = None
    w_variance: float = 1.0

    def __post_init__(self):
        if self.depth < 1:
            raise ParameterError(f"depth must be >= 1, got {self.depth}")
        if self.kind not in KINDS:
            raise ParameterError(f"kind must be one of {KINDS}")
        if self.mean_mode not in MEAN_MODES:
            raise ParameterError(f"mean_mode must be one of {MEAN_MODES}")
        for name in ("variances", "lengthscales"):
            v = getattr(self, name)
            if len(v) not in (1, self.depth):
                raise ParameterError(f"{name} needs 1 or {self.depth} entries")
        if self.widths is not None:
            if len(self.widths) != self.depth - 1 or any(w < 1 for w in self.widths):
                raise ParameterError("widths must list depth-1 positive ints")
        if self.w_variance < 0 or any(v < 0 for v in self.variances):
            raise ParameterError("variances must be non-negative")

    def layer(self, ell):
        """(variance, lengthscale) of layer ``ell`` in 1..L."""
        pick = lambda v: v[0] if len(v) == 1 else v[ell - 1]  # noqa: E731
        return float(pick(self.variances)), float(pick(self.lengthscales))

    def width(self, ell, input_dim):
        return input_dim if self.widths is None else int(self.widths[ell - 1])

    def truncated(self, depth):
        """Same architecture cut to ``depth`` layers (first ``depth-1`` hidden
        layers plus the output layer)."""
        cut = lambda v: v if len(v) == 1 else tuple(v[: depth - 1]) + (v[-1],)  # noqa: E731
        widths = None if self.widths is None else tuple(self.widths[: depth - 1])
        return DepthConfig(
            depth, self.kind, self.mean_mode, cut(self.variances), cut(self.lengthscales),
            widths, self.w_variance,
        )


@dataclass
class PriorSampleGrid:
    grid: np.ndarray
    layers: list  # h^0 .. h^{L-1}, each g x Q_l (augmented mode keeps the trailing 1)
    f: np.ndarray
    covariances: list  # kernel matrix used by each layer 1..L
    extras: dict = field(default_factory=dict)  # e.g. sampled d-blocks / W fields

    @property
    def depth(self):
        return len(self.covariances)

    def to_csv(self, directory, prefix="prior"):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        g, D = self.grid.shape
        cols = [f"x{j}" for j in range(D)]
        for ell, h in enumerate(self.layers[1:], start=1):
            cols += [f"h{ell}_{q}" for q in range(h.shape[1])]
        cols.append("f")
        data = np.hstack([self.grid] + self.layers[1:] + [self.f[:, None]])
        _write_matrix(directory / f"{prefix}_samples.csv", cols, data)
        for ell, K in enumerate(self.covariances, start=1):
            _write_matrix(directory / f"{prefix}_cov_layer{ell}.csv", [f"c{j}" for j in range(g)], K)


def _write_matrix(path, header, data):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(v)) for v in row])


def _se(H, variance, lengthscale):
    return variance * np.exp(-0.5 * sq_dist(H / lengthscale, H / lengthscale))


def _draw(K, mean, seed, layer, row):
    """One joint draw ``N(mean, K)`` from the stream ``(seed, layer, row)``."""
    eps = np.random.default_rng([seed, layer, row]).standard_normal(K.shape[0])
    scale = float(np.mean(np.diag(K)))
    if scale == 0.0:
        return np.array(mean, dtype=float, copy=True)
    L = np.sqrt(scale) * robust_cholesky(K / scale)
    return mean + L @ eps


def augmented_layer(W_block, d_block, x):
    """``W~ x~`` with ``W~ = [[W, d], [0, 1]]`` and ``x~ = [x, 1]``.

    Accepts a single point (``W_block`` Q x D, ``d_block`` Q, ``x`` D) or a
    batch with a leading axis. Returns the augmented image ``[W x + d, 1]``.
    """
    W = np.asarray(W_block, dtype=float)
    d = np.asarray(d_block, dtype=float)
    x = np.asarray(x, dtype=float)
    single = W.ndim == 2
    if single:
        W, d, x = W[None], d[None], x[None]
    n, Q, D = W.shape
    Wt = np.zeros((n, Q + 1, D + 1))
    Wt[:, :Q, :D] = W
    Wt[:, :Q, D] = d
    Wt[:, Q, D] = 1.0
    xt = np.concatenate([x, np.ones((n, 1))], axis=1)
    out = np.einsum("nqd,nd->nq", Wt, xt)
    return out[0] if single else out


def sample_prior(cfg: DepthConfig, grid, seed=0):
    """Draw one sample of every layer of a depth-``cfg.depth`` prior on ``grid``."""
    X = np.atleast_2d(np.asarray(grid, dtype=float))
    if X.shape[0] == 1 and np.ndim(grid) == 1:
        X = X.T
    if not np.all(np.isfinite(X)):
        raise ParameterError("grid must be finite")
    if X.shape[0] > MAX_GRID:
        raise ParameterError(f"grid has {X.shape[0]} points; the cap is {MAX_GRID}")
    g, D = X.shape
    layers = [X]
    covs = []
    extras = {"W": [], "d": []}
    H = X  # representation fed to the next kernel (without the bias column)
    for ell in range(1, cfg.depth):
        var, ls = cfg.layer(ell)
        K = _se(H, var, ls)
        covs.append(K)
        Q = cfg.width(ell, D)
        Qprev = H.shape[1]
        if cfg.kind == "cdgp":
            cols = []
            for q in range(Q):
                mean = H[:, q] if (cfg.mean_mode == "linear-identity" and q < Qprev) else np.zeros(g)
                cols.append(_draw(K, mean, seed, ell, q))
            H = np.stack(cols, axis=1)
            layers.append(H)
        else:
            W = np.empty((g, Q, D))
            wvar = var if cfg.kind == "tdgp" else cfg.w_variance
            Kw = K if cfg.kind == "tdgp" else _se(H, cfg.w_variance, ls)
            for q in range(Q):
                for d in range(D):
                    mu = 1.0 if (cfg.mean_mode == "linear-identity" and q == d) else 0.0
                    if cfg.kind == "tdgp-augmented":
                        mu = 0.0
                    if wvar == 0.0:
                        W[:, q, d] = mu
                    else:
                        W[:, q, d] = _draw(Kw, np.full(g, mu), seed, ell, _W_STREAM + q * D + d)
            extras["W"].append(W)
            if cfg.kind == "tdgp":
                H = np.einsum("gqd,gd->gq", W, X)
                layers.append(H)
            else:
                dcols = []
                for q in range(Q):
                    mean = H[:, q] if (cfg.mean_mode == "linear-identity" and q < Qprev) else np.zeros(g)
                    dcols.append(_draw(K, mean, seed, ell, q))
                dblk = np.stack(dcols, axis=1)
                extras["d"].append(dblk)
                Ht = augmented_layer(W, dblk, X)
                layers.append(Ht)
                H = Ht[:, :-1]
    var, ls = cfg.layer(cfg.depth)
    K = _se(H, var, ls)
    covs.append(K)
    f = _draw(K, np.zeros(g), seed, cfg.depth, _F_STREAM)
    return PriorSampleGrid(X, layers, f, covs, extras)


def saturation_stats(cfg: DepthConfig, grid, seeds):
    """Mean |off-diagonal correlation| of the output kernel matrix per depth.

    Depth ``ell`` uses the first ``ell - 1`` hidden layers of ``cfg`` and its
    output layer. Returns ``(mean, stderr)`` arrays of length ``cfg.depth``.
    """
    seeds = list(seeds)
    if len(seeds) < 30:
        raise ParameterError("saturation statistics need at least 30 seeds")
    vals = np.empty((len(seeds), cfg.depth))
    for i, s in enumerate(seeds):
        for ell in range(1, cfg.depth + 1):
            vals[i, ell - 1] = _offdiag_corr(sample_prior(cfg.truncated(ell), grid, s).covariances[-1])
    return vals.mean(axis=0), vals.std(axis=0, ddof=1) / np.sqrt(len(seeds))


def _offdiag_corr(K):
    d = np.sqrt(np.diag(K))
    C = K / np.outer(d, d)
    g = C.shape[0]
    return float((np.sum(np.abs(C)) - np.trace(np.abs(C))) / (g * (g - 1)))


def flatness_fraction(cfg: DepthConfig, grid, seeds, shallow_depth=1):
    """Fraction of seeds whose output sample at ``cfg.depth`` has smaller
    standard deviation across the grid than the ``shallow_depth`` sample."""
    shallow = cfg.truncated(shallow_depth)
    hits = [
        np.std(sample_prior(cfg, grid, s).f) < np.std(sample_prior(shallow, grid, s).f)
        for s in seeds
    ]
    return float(np.mean(hits))
