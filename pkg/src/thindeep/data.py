"""Datasets: the synthetic "funnel" benchmark, CSV ingestion, normalisation
and k-fold assignment."""

from __future__ import annotations

import csv
import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

__all__ = [
    "Dataset",
    "funnel_latent",
    "funnel_link",
    "gen_synthetic",
    "load_csv",
    "save_csv",
    "normalize",
    "kfold",
    "kmeans_centres",
]


@dataclass(frozen=True)
class Dataset:
    """Inputs/targets plus whatever normalisation and split metadata applies.

    ``X``/``y`` are stored in the normalised scale once :func:`normalize` has
    been applied; ``x_mean``... hold the constants fitted on training rows.
    """

    X: np.ndarray
    y: np.ndarray
    columns: tuple = ()
    target: str = "y"
    train_mask: np.ndarray | None = None
    folds: np.ndarray | None = None
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    y_mean: float | None = None
    y_std: float | None = None
    extras: dict = field(default_factory=dict, compare=False)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def dim(self):
        return self.X.shape[1]

    @property
    def normalized(self):
        return self.x_mean is not None

    def subset(self, mask):
        mask = np.asarray(mask)
        return dataclasses.replace(
            self,
            X=self.X[mask],
            y=self.y[mask],
            train_mask=None if self.train_mask is None else self.train_mask[mask],
            folds=None if self.folds is None else self.folds[mask],
            extras={k: v[mask] for k, v in self.extras.items()},
        )

    def denormalize_X(self, X):
        return np.asarray(X) * self.x_std + self.x_mean

    def denormalize_y(self, y):
        return np.asarray(y) * self.y_std + self.y_mean

    def raw(self):
        """Copy in the original units (identity if never normalised)."""
        if not self.normalized:
            return self
        return dataclasses.replace(
            self,
            X=self.denormalize_X(self.X),
            y=self.denormalize_y(self.y),
            x_mean=None,
            x_std=None,
            y_mean=None,
            y_std=None,
        )


# -- synthetic benchmark ----------------------------------------------------------


def funnel_latent(X):
    """``h(x) = 2 x0 sin(pi x0) + 2 cos(pi x0)``; ignores every other column."""
    x0 = np.asarray(X, dtype=float)[..., 0]
    return 2.0 * x0 * np.sin(np.pi * x0) + 2.0 * np.cos(np.pi * x0)


def funnel_link(z):
    """``g(z) = sin(z)/z - z^2`` with the removable singularity filled in."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    sinc = np.where(small, 1.0 - z**2 / 6.0, np.sin(safe) / safe)
    return sinc - z**2


def gen_synthetic(n=200, seed=0):
    """Uniform inputs on [-1, 1]^2 with targets ``g(h(x))``, split 50/50."""
    if n < 2:
        raise DataError(f"need at least 2 samples, got {n}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, 2))
    h = funnel_latent(X)
    y = funnel_link(h)
    train = np.zeros(n, dtype=bool)
    train[rng.permutation(n)[: n // 2]] = True
    return Dataset(
        X=X, y=y, columns=("x0", "x1"), target="y", train_mask=train, extras={"latent": h}
    )


# -- CSV --------------------------------------------------------------------------


def _parse_float(tok, lineno, col):
    try:
        v = float(tok)
    except ValueError:
        raise DataError(f"line {lineno}: column {col!r}: cannot parse {tok!r}") from None
    if not math.isfinite(v):
        raise DataError(f"line {lineno}: column {col!r}: non-finite value {tok!r}")
    return v


def load_csv(path, target_column):
    """Read a numeric CSV with a header row; ``target_column`` becomes ``y``.

    An optional column named ``split`` (values ``train``/``test``) becomes
    the train mask; one named ``fold`` becomes fold labels.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if target_column not in header:
            raise DataError(f"{path}: no column named {target_column!r} (have {header})")
        rows, splits, folds = [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not t.strip() for t in rec):
                continue
            if len(rec) != len(header):
                raise DataError(
                    f"line {lineno}: expected {len(header)} fields, got {len(rec)}"
                )
            vals = []
            for name, tok in zip(header, rec):
                if name == "split":
                    if tok.strip() not in ("train", "test"):
                        raise DataError(f"line {lineno}: bad split value {tok!r}")
                    splits.append(tok.strip() == "train")
                elif name == "fold":
                    folds.append(int(_parse_float(tok, lineno, name)))
                else:
                    vals.append(_parse_float(tok, lineno, name))
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    numeric = [h for h in header if h not in ("split", "fold")]
    arr = np.array(rows, dtype=float)
    t = numeric.index(target_column)
    X = np.delete(arr, t, axis=1)
    return Dataset(
        X=X,
        y=arr[:, t],
        columns=tuple(h for h in numeric if h != target_column),
        target=target_column,
        train_mask=np.array(splits) if splits else None,
        folds=np.array(folds) if folds else None,
    )


def save_csv(ds: Dataset, path):
    """Write ``ds`` (in raw units) with a ``split`` column when a mask exists."""
    ds = ds.raw()
    cols = list(ds.columns) or [f"x{j}" for j in range(ds.dim)]
    header = cols + [ds.target]
    if ds.train_mask is not None:
        header.append("split")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(ds.n):
            row = [repr(float(v)) for v in ds.X[i]] + [repr(float(ds.y[i]))]
            if ds.train_mask is not None:
                row.append("train" if ds.train_mask[i] else "test")
            w.writerow(row)


# -- normalisation / folds ----------------------------------------------------------


def normalize(ds: Dataset, train_mask=None):
    """Standardise inputs and targets with constants from the training rows.

    ``train_mask`` defaults to ``ds.train_mask`` and then to all rows.
    """
    if ds.normalized:
        ds = ds.raw()
    if train_mask is None:
        train_mask = ds.train_mask if ds.train_mask is not None else np.ones(ds.n, bool)
    train_mask = np.asarray(train_mask, dtype=bool)
    Xt, yt = ds.X[train_mask], ds.y[train_mask]
    if len(yt) < 2:
        raise DataError("need at least two training rows to normalise")
    xm, xs = Xt.mean(axis=0), Xt.std(axis=0)
    ym, ys = float(yt.mean()), float(yt.std())
    names = list(ds.columns) or [f"x{j}" for j in range(ds.dim)]
    for j in np.flatnonzero(xs < 1e-12):
        raise DataError(f"column {names[j]!r} is constant on the training rows (std 0)")
    if ys < 1e-12:
        raise DataError(f"target {ds.target!r} is constant on the training rows (std 0)")
    return dataclasses.replace(
        ds,
        X=(ds.X - xm) / xs,
        y=(ds.y - ym) / ys,
        train_mask=train_mask,
        x_mean=xm,
        x_std=xs,
        y_mean=ym,
        y_std=ys,
    )


def kfold(ds_or_n, k, seed=0):
    """Balanced fold labels in ``0..k-1``, shuffled deterministically by ``seed``."""
    n = ds_or_n if isinstance(ds_or_n, (int, np.integer)) else ds_or_n.n
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    if k > n:
        raise DataError(f"k={k} exceeds number of rows {n}")
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=int)
    labels[perm] = np.arange(n) % k
    return labels


def kmeans_centres(X, k, rng=None):
    """``k`` k-means centres of the rows of ``X`` (all rows if ``k >= n``)."""
    from scipy.cluster.vq import kmeans2

    X = np.asarray(X, dtype=float)
    if k >= X.shape[0]:
        return X.copy()
    seed = rng if rng is not None else np.random.default_rng(0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        centres, _ = kmeans2(X, k, minit="++", seed=seed)
    return centres
