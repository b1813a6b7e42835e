"""Pilot run used to freeze the deep-prior acceptance thresholds.

Draws depth-5 zero-mean priors (unit variance and lengthscale) on 101 points
in [-5, 5] for seeds 10_000..10_499, disjoint from the acceptance seeds, and
prints the saturation statistic and flatness fraction per kind.
"""

import time

import numpy as np

from thindeep.priors import DepthConfig, flatness_fraction, saturation_stats

GRID = np.linspace(-5.0, 5.0, 101)
SEEDS = range(10_000, 10_500)

if __name__ == "__main__":
    for kind in ("cdgp", "tdgp"):
        t0 = time.perf_counter()
        cfg = DepthConfig(5, kind, "zero")
        mean, se = saturation_stats(cfg, GRID, SEEDS)
        flat = flatness_fraction(cfg, GRID, SEEDS)
        print(f"{kind}: saturation {np.round(mean, 4).tolist()} se {np.round(se, 4).tolist()}")
        print(f"{kind}: flatness {flat:.4f}  ({time.perf_counter() - t0:.1f}s)")
