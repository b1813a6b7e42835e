"""NLPD, MRAE and cross-validation reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError

MRAE_EPS = 1e-8


def nlpd(pred_mean, pred_var, y):
    """Average negative log density of ``y`` under independent Gaussians."""
    mu = np.asarray(pred_mean, dtype=float).ravel()
    v = np.asarray(pred_var, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if not (mu.shape == v.shape == y.shape):
        raise ParameterError("pred_mean, pred_var and y must have equal length")
    if np.any(~(v > 0)):
        raise ParameterError("predictive variances must be positive")
    return float(np.mean(0.5 * np.log(2.0 * np.pi * v) + (y - mu) ** 2 / (2.0 * v)))


def mrae(pred_mean, y, kind="relative", eps=MRAE_EPS):
    """Mean relative absolute error.

    ``kind="relative"``: mean of ``|mu - y| / max(|y|, eps)``.
    ``kind="dispersion"``: mean ``|mu - y|`` over mean ``|y - mean(y)|``.
    """
    mu = np.asarray(pred_mean, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if mu.shape != y.shape:
        raise ParameterError("pred_mean and y must have equal length")
    err = np.abs(mu - y)
    if kind == "relative":
        return float(np.mean(err / np.maximum(np.abs(y), eps)))
    if kind == "dispersion":
        return float(np.mean(err) / max(np.mean(np.abs(y - y.mean())), eps))
    raise ParameterError(f"unknown MRAE kind {kind!r}")


@dataclass
class FoldResult:
    fold: int
    nlpd: float
    mrae: float
    nlpd_raw: float
    n_test: int
    clamped: int = 0
    seconds: float = 0.0


@dataclass
class EvalReport:
    model: str
    dataset: str
    folds: list = field(default_factory=list)

    def _agg(self, key):
        vals = np.array([getattr(f, key) for f in self.folds], dtype=float)
        return float(vals.mean()), float(vals.std())

    @property
    def nlpd(self):
        return self._agg("nlpd")

    @property
    def mrae(self):
        return self._agg("mrae")

    def summary(self):
        nm, ns = self.nlpd
        mm, ms = self.mrae
        rm, rs = self._agg("nlpd_raw")
        return {
            "model": self.model,
            "dataset": self.dataset,
            "n_folds": len(self.folds),
            "nlpd_mean": nm,
            "nlpd_std": ns,
            "mrae_mean": mm,
            "mrae_std": ms,
            "nlpd_raw_mean": rm,
            "nlpd_raw_std": rs,
            "clamped": int(sum(f.clamped for f in self.folds)),
            "seconds": float(sum(f.seconds for f in self.folds)),
        }

    def to_json(self, path):
        doc = {"summary": self.summary(), "folds": [asdict(f) for f in self.folds]}
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    def to_csv(self, path, with_timing=False):
        keys = ["model", "dataset", "fold", "nlpd", "mrae", "nlpd_raw", "n_test", "clamped"]
        if with_timing:
            keys.append("seconds")
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for f in self.folds:
                d = dict(asdict(f), model=self.model, dataset=self.dataset)
                w.writerow([repr(float(d[k])) if isinstance(d[k], float) else d[k] for k in keys])


def evaluate(model, X_test, y_test, y_std=1.0, fold=0, kind="relative"):
    """Predict on normalised test data and score it as a :class:`FoldResult`.

    ``nlpd_raw`` is the NLPD in original target units,
    ``nlpd + log(y_std)``.
    """
    mean, _, var_y, clamped = model.predict(X_test)
    score = nlpd(mean, var_y, y_test)
    return FoldResult(
        fold=fold,
        nlpd=score,
        mrae=mrae(mean, y_test, kind=kind),
        nlpd_raw=score + float(np.log(y_std)),
        n_test=int(len(y_test)),
        clamped=clamped,
    )
