import numpy as np
import pytest
from scipy import linalg

from lupi_hcrf.fusion import FusionMap, default_eta_grid, fit_cls, predict_privileged, select_eta


def test_identity_design():
    a = np.array([[1.0, -2.0], [0.5, 3.0], [4.0, 0.0]])
    fmap = fit_cls(np.eye(3), a, 1.0)
    np.testing.assert_array_equal(fmap.gamma, a / 2)


def test_interpolation_without_penalty(rng):
    x = rng.standard_normal((4, 4)) + 3 * np.eye(4)
    a = rng.standard_normal((4, 2))
    fmap = fit_cls(x, a, 0.0)
    np.testing.assert_allclose(x @ fmap.gamma, a, atol=1e-10)
    np.testing.assert_allclose(predict_privileged(fmap, x), a, atol=1e-10)


def test_matches_normal_equations(rng):
    x = rng.standard_normal((10, 3))
    a = rng.standard_normal((10, 2))
    expected = np.linalg.inv(x.T @ x + 0.1 * np.eye(3)) @ x.T @ a
    np.testing.assert_allclose(fit_cls(x, a, 0.1).gamma, expected, atol=1e-8)


def test_residual_bound(rng):
    for _ in range(100):
        M, d, p = rng.integers(1, 30), rng.integers(1, 8), rng.integers(1, 5)
        x = rng.standard_normal((M, d)) * rng.uniform(0.1, 10)
        a = rng.standard_normal((M, p))
        eta = float(10 ** rng.uniform(-4, 0))
        g = fit_cls(x, a, eta).gamma
        lhs = (x.T @ x + eta * np.eye(d)) @ g
        rhs = x.T @ a
        scale = max(1.0, np.abs(rhs).max(), np.abs(x.T @ x).max() * np.abs(g).max())
        assert np.abs(lhs - rhs).max() < 1e-8 * scale


def test_singular_at_zero_eta():
    x = np.ones((5, 2))
    with pytest.raises(linalg.LinAlgError, match="singular"):
        fit_cls(x, np.ones((5, 1)), 0.0)


def test_shrinkage(rng):
    x = rng.standard_normal((20, 4))
    a = rng.standard_normal((20, 3))
    norms = [np.linalg.norm(fit_cls(x, a, eta).gamma) for eta in np.logspace(-4, 4, 30)]
    assert np.all(np.diff(norms) <= 0)
    big = np.linalg.norm(fit_cls(x, a, 1e12).gamma)
    assert big < 1e-8 * np.linalg.norm(x.T @ a)


def test_predict_cases():
    fmap = FusionMap(np.arange(6.0).reshape(3, 2), 0.1)
    np.testing.assert_array_equal(predict_privileged(FusionMap(np.zeros((3, 2)), 0.1), np.ones((4, 3))), 0)
    np.testing.assert_array_equal(predict_privileged(fmap, np.array([[0.0, 1.0, 0.0]])), [[2.0, 3.0]])
    with pytest.raises(ValueError):
        predict_privileged(fmap, np.ones((2, 2)))


def test_select_eta(rng):
    x = rng.standard_normal((60, 4))
    a = x @ rng.standard_normal((4, 2))
    eta, table = select_eta(x, a, default_eta_grid(), k=5, seed=0)
    assert eta == pytest.approx(1e-4)
    assert len(table) == 9
    assert table[0][1] < 1e-6
    one, t1 = select_eta(x, a, [0.3], k=3)
    assert one == 0.3 and len(t1) == 1


def test_select_eta_deterministic(rng):
    x = rng.standard_normal((40, 3))
    a = x @ rng.standard_normal((3, 2)) + 0.5 * rng.standard_normal((40, 2))
    assert select_eta(x, a, seed=2) == select_eta(x, a, seed=2)


def test_default_grid():
    g = default_eta_grid()
    assert g.size == 9 and g[0] == pytest.approx(1e-4) and g[-1] == pytest.approx(1.0)
