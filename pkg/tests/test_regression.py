import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfspde.regression import RegressionDiagnostics, RegressionSpec, conditional_expectation


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), deg=st.integers(1, 3))
def test_polynomial_targets_reproduced(seed, deg):
    rng = np.random.default_rng(seed)
    Y = rng.normal(1.0, 0.3, size=(400, 3))
    coef = rng.normal(size=deg + 1)
    target = sum(c * Y**i for i, c in enumerate(coef))
    est = conditional_expectation(Y, target, RegressionSpec(degree=deg, ridge=0.0))
    np.testing.assert_allclose(est, target, rtol=1e-7, atol=1e-7 * np.abs(target).max())


def test_noise_is_averaged_out():
    rng = np.random.default_rng(0)
    Y = rng.uniform(0, 1, size=(20_000, 1))
    eps = rng.normal(size=Y.shape)
    est = conditional_expectation(Y, 2 * Y + eps, RegressionSpec(degree=1))
    assert np.max(np.abs(est - 2 * Y)) < 0.1


def test_constant_state_falls_back_to_mean():
    Y = np.ones((50, 2))
    tgt = np.arange(100.0).reshape(50, 2)
    diag = RegressionDiagnostics()
    est = conditional_expectation(Y, tgt, RegressionSpec(), diag)
    np.testing.assert_allclose(est, np.broadcast_to(tgt.mean(axis=0), tgt.shape))
    assert diag.fallbacks == 2 and diag.fits == 2


def test_multiple_targets_share_regressors():
    rng = np.random.default_rng(2)
    Y = rng.normal(size=(300, 2))
    tg = np.stack([Y, 3 * Y**2], axis=-1)
    est = conditional_expectation(Y, tg, RegressionSpec(degree=2, ridge=0))
    np.testing.assert_allclose(est, tg, atol=1e-8)


def test_log_transform_fits_reciprocal():
    rng = np.random.default_rng(3)
    Y = np.exp(rng.normal(size=(2000, 1)))
    tgt = 1.0 / Y
    id_err = np.abs(conditional_expectation(Y, tgt, RegressionSpec(degree=3)) - tgt).mean()
    log_err = np.abs(conditional_expectation(Y, tgt, RegressionSpec(degree=3, transform="log")) - tgt).mean()
    assert log_err < id_err


def test_degree_zero_is_mean():
    Y = np.random.default_rng(0).normal(size=(10, 2))
    np.testing.assert_allclose(conditional_expectation(Y, Y, RegressionSpec(degree=0)),
                               np.broadcast_to(Y.mean(0), Y.shape))


def test_neighbors_option():
    rng = np.random.default_rng(4)
    Y = rng.normal(size=(500, 3))
    tgt = Y[:, [1, 2, 1]] * 1.0
    tgt[:, 1] = Y[:, 0] + Y[:, 2]
    est = conditional_expectation(Y, tgt, RegressionSpec(degree=1, ridge=0, neighbors=True))
    np.testing.assert_allclose(est[:, 1], tgt[:, 1], atol=1e-8)


@pytest.mark.parametrize("kw", [{"transform": "sqrt"}, {"degree": -1}, {"ridge": -1.0}])
def test_invalid_spec(kw):
    with pytest.raises(ValueError):
        RegressionSpec(**kw)
