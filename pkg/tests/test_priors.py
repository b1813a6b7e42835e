import numpy as np
import pytest

from thindeep.errors import ParameterError
from thindeep.priors import (
    MAX_GRID,
    DepthConfig,
    augmented_layer,
    flatness_fraction,
    sample_prior,
    saturation_stats,
)

GRID = np.linspace(-2, 2, 25)


def _se(x, var=1.0, ell=1.0):
    return var * np.exp(-0.5 * (x[:, None] - x[None, :]) ** 2 / ell**2)


def test_depth_one_is_shallow_gp():
    a = sample_prior(DepthConfig(1, "cdgp"), GRID, seed=4)
    b = sample_prior(DepthConfig(1, "tdgp"), GRID, seed=4)
    np.testing.assert_array_equal(a.f, b.f)
    np.testing.assert_allclose(a.covariances[0], _se(GRID), atol=1e-15)
    assert a.depth == 1 and len(a.layers) == 1
    np.testing.assert_array_equal(a.layers[0][:, 0], GRID)


def test_tdgp_fixes_origin():
    grid = np.linspace(-3, 3, 31)  # contains 0 exactly
    s = sample_prior(DepthConfig(4, "tdgp"), grid, seed=9)
    i0 = int(np.flatnonzero(grid == 0.0)[0])
    for h in s.layers[1:]:
        assert np.all(h[i0] == 0.0)


def test_cdgp_depth_two_covariance_closed_form():
    # h ~ GP(0, K1); h(x) - h(x') ~ N(0, s2) so E[exp(-dh^2/2)] = (1 + s2)^(-1/2)
    grid = np.array([-0.7, 0.0, 0.5])
    K1 = _se(grid)
    s2 = np.diag(K1)[:, None] + np.diag(K1)[None, :] - 2 * K1
    expected = 1.0 / np.sqrt(1.0 + s2)
    cfg = DepthConfig(2, "cdgp")
    draws = [sample_prior(cfg, grid, seed=s) for s in range(10_000)]
    mean_cov = np.mean([d.covariances[-1] for d in draws], axis=0)
    emp_cov = np.cov(np.array([d.f for d in draws]).T)
    np.testing.assert_allclose(mean_cov, expected, rtol=0.05)
    np.testing.assert_allclose(emp_cov, expected, rtol=0.05)


def test_seed_determinism_bitwise():
    cfg = DepthConfig(3, "tdgp-augmented", "linear-identity")
    a, b = sample_prior(cfg, GRID, 17), sample_prior(cfg, GRID, 17)
    for x, y in zip(a.layers + a.covariances + [a.f], b.layers + b.covariances + [b.f]):
        np.testing.assert_array_equal(x, y)
    c = sample_prior(cfg, GRID, 18)
    assert not np.array_equal(a.f, c.f)


def test_widths_and_shapes():
    grid = np.random.default_rng(0).uniform(-1, 1, size=(20, 2))
    s = sample_prior(DepthConfig(3, "cdgp", widths=(3, 1)), grid, 1)
    assert [h.shape[1] for h in s.layers] == [2, 3, 1]
    t = sample_prior(DepthConfig(3, "tdgp", widths=(3, 1)), grid, 1)
    assert [h.shape[1] for h in t.layers] == [2, 3, 1]
    assert all(K.shape == (20, 20) for K in t.covariances)


# -- augmented construction ----------------------------------------------------------------


def test_augmented_layer_block_product(rng):
    W, d, x = rng.normal(size=(3, 2)), rng.normal(size=3), rng.normal(size=2)
    Wt = np.block([[W, d[:, None]], [np.zeros((1, 2)), np.ones((1, 1))]])
    np.testing.assert_allclose(augmented_layer(W, d, x), Wt @ np.append(x, 1.0), rtol=1e-14)


def test_augmented_layer_limits(rng):
    W, d, x = rng.normal(size=(5, 2, 3)), rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
    out = augmented_layer(np.zeros_like(W), d, x)
    np.testing.assert_array_equal(out[:, :2], d)
    np.testing.assert_array_equal(out[:, 2], 1.0)
    np.testing.assert_allclose(augmented_layer(W, np.zeros_like(d), x)[:, :2], np.einsum("nqd,nd->nq", W, x))


def test_augmented_bottom_row_is_one():
    s = sample_prior(DepthConfig(4, "tdgp-augmented"), GRID, 3)
    for h in s.layers[1:]:
        assert np.all(h[:, -1] == 1.0)


def test_augmented_zero_w_variance_is_composition():
    cfg_aug = DepthConfig(4, "tdgp-augmented", w_variance=0.0)
    cfg_cd = DepthConfig(4, "cdgp")
    a, c = sample_prior(cfg_aug, GRID, 12), sample_prior(cfg_cd, GRID, 12)
    for ha, hc in zip(a.layers[1:], c.layers[1:]):
        assert np.max(np.abs(ha[:, :-1] - hc)) <= 1e-10
    assert np.max(np.abs(a.f - c.f)) <= 1e-10


# -- statistics -----------------------------------------------------------------------------


def test_saturation_depth_one_distant_points_small():
    grid = np.linspace(-20, 20, 11)  # spacing 4 lengthscales
    mean, se = saturation_stats(DepthConfig(1), grid, range(30))
    assert mean[0] < 0.01
    assert se[0] <= 1e-15


def test_saturation_grows_for_zero_mean_cdgp():
    grid = np.linspace(-5, 5, 41)
    mean, _ = saturation_stats(DepthConfig(5, "cdgp"), grid, range(60))
    assert np.all(np.diff(mean) >= -0.02)
    assert mean[-1] > mean[0] + 0.3


def test_saturation_needs_enough_seeds():
    with pytest.raises(ParameterError):
        saturation_stats(DepthConfig(2), GRID, range(10))


def test_flatness_fraction_range():
    f = flatness_fraction(DepthConfig(3, "cdgp"), GRID, range(20))
    assert 0.0 <= f <= 1.0


# -- validation and output ---------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ParameterError):
        DepthConfig(0)
    with pytest.raises(ParameterError):
        DepthConfig(2, "dnsgp")
    with pytest.raises(ParameterError):
        DepthConfig(2, mean_mode="quadratic")
    with pytest.raises(ParameterError):
        DepthConfig(3, variances=(1.0, 2.0))
    with pytest.raises(ParameterError):
        DepthConfig(3, widths=(2,))
    with pytest.raises(ParameterError):
        DepthConfig(2, variances=(-1.0,))


def test_grid_validation():
    with pytest.raises(ParameterError):
        sample_prior(DepthConfig(1), np.linspace(0, 1, MAX_GRID + 1))
    with pytest.raises(ParameterError):
        sample_prior(DepthConfig(1), np.array([0.0, np.nan]))


def test_truncated_keeps_output_layer():
    cfg = DepthConfig(4, variances=(1.0, 2.0, 3.0, 4.0), lengthscales=(0.5,))
    t = cfg.truncated(2)
    assert t.depth == 2 and t.variances == (1.0, 4.0)


def test_to_csv(tmp_path):
    s = sample_prior(DepthConfig(2, "tdgp"), GRID, 0)
    s.to_csv(tmp_path)
    lines = (tmp_path / "prior_samples.csv").read_text().splitlines()
    assert lines[0] == "x0,h1_0,f"
    assert len(lines) == len(GRID) + 1
    assert (tmp_path / "prior_cov_layer2.csv").exists()
