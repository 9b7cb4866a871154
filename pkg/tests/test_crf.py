import numpy as np
import pytest

from lupi_hcrf.crf import HCRFConfig, ModelParams, energy, pairwise_scores, unary_scores

from conftest import random_instance


def test_zero_params_give_zero_table(rng):
    cfg = HCRFConfig(3, 4, 2, 3)
    table = unary_scores(ModelParams.zeros(cfg), cfg, rng.standard_normal((5, 2)),
                         rng.standard_normal((5, 3)))
    assert table.shape == (5, 3, 4)
    assert np.all(table == 0)


def test_identity_observation_weights():
    cfg = HCRFConfig(2, 3, 3, 1)
    p = ModelParams.zeros(cfg)
    p.theta2 = np.eye(3)
    frames = np.eye(3)
    table = unary_scores(p, cfg, frames)
    for j in range(3):
        for lam in range(2):
            np.testing.assert_array_equal(table[j, lam], np.eye(3)[j])


def test_unary_matches_direct_sum(rng):
    for _ in range(20):
        cfg, p, x, xs = random_instance(rng)
        table = unary_scores(p, cfg, x, xs)
        for j in range(x.shape[0]):
            for lam in range(cfg.n_labels):
                for a in range(cfg.n_states):
                    direct = p.theta1[lam, a] + p.theta2[a] @ x[j] + p.theta3[a] @ xs[j]
                    assert abs(table[j, lam, a] - direct) < 1e-12


def test_pairwise_is_tensor_slice(rng):
    cfg, p, _, _ = random_instance(rng)
    for lam in range(cfg.n_labels):
        assert np.array_equal(pairwise_scores(p, cfg, lam), p.omega[lam])
    z = ModelParams.zeros(cfg)
    assert np.all(pairwise_scores(z, cfg, 0) == 0)
    z.omega[1] = np.eye(cfg.n_states)
    np.testing.assert_array_equal(pairwise_scores(z, cfg, 1), np.eye(cfg.n_states))
    with pytest.raises(ValueError):
        pairwise_scores(p, cfg, cfg.n_labels)


def test_energy_cases(rng):
    cfg = HCRFConfig(2, 2, 3, 2)
    x = rng.standard_normal((3, 3))
    xs = rng.standard_normal((3, 2))
    assert energy(ModelParams.zeros(cfg), cfg, 1, [0, 1, 1], x, xs) == 0.0
    p = ModelParams.random(cfg, 1.0, seed=4)
    u = unary_scores(p, cfg, x, xs)
    assert energy(p, cfg, 0, [1], x[:1], xs[:1]) == pytest.approx(u[0, 0, 1], abs=1e-12)
    h = [1, 0, 1]
    by_hand = (u[0, 1, 1] + u[1, 1, 0] + u[2, 1, 1]
               + p.omega[1, 1, 0] + p.omega[1, 0, 1])
    assert abs(energy(p, cfg, 1, h, x, xs) - by_hand) < 1e-12
    with pytest.raises(ValueError):
        energy(p, cfg, 0, [0, 2, 0], x, xs)


def test_energy_linear_in_params(rng):
    for _ in range(10):
        cfg, p, x, xs = random_instance(rng)
        h = rng.integers(cfg.n_states, size=x.shape[0])
        e = energy(p, cfg, 0, h, x, xs)
        for alpha in (-2.0, 0.5, 3.0):
            assert energy(p.scaled(alpha), cfg, 0, h, x, xs) == pytest.approx(alpha * e, abs=1e-10)


def test_energy_privileged_additivity(rng):
    for _ in range(10):
        cfg, p, x, xs = random_instance(rng)
        h = rng.integers(cfg.n_states, size=x.shape[0])
        lam = int(rng.integers(cfg.n_labels))
        extra = sum(p.theta3[h[j]] @ xs[j] for j in range(x.shape[0]))
        assert energy(p, cfg, lam, h, x, xs) == pytest.approx(
            energy(p, cfg, lam, h, x, None) + extra, abs=1e-10)


def test_pack_unpack_bijection(rng):
    for _ in range(100):
        cfg, p, _, _ = random_instance(rng)
        flat = p.pack()
        assert flat.size == cfg.n_params
        assert ModelParams.unpack(flat, cfg) == p
        assert np.array_equal(ModelParams.unpack(flat, cfg).pack(), flat)


def test_pack_ordering():
    cfg = HCRFConfig(2, 2, 1, 1)
    p = ModelParams.unpack(np.arange(cfg.n_params, dtype=float), cfg)
    np.testing.assert_array_equal(p.theta1, [[0, 1], [2, 3]])
    np.testing.assert_array_equal(p.theta2, [[4], [5]])
    np.testing.assert_array_equal(p.theta3, [[6], [7]])
    assert p.omega[0, 0, 0] == 8 and p.omega[1, 1, 1] == 15


def test_shape_errors(rng):
    cfg = HCRFConfig(2, 2, 3, 2)
    p = ModelParams.zeros(cfg)
    with pytest.raises(ValueError):
        unary_scores(p, cfg, np.zeros((4, 2)))
    with pytest.raises(ValueError):
        unary_scores(p, cfg, np.zeros((4, 3)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        HCRFConfig(1, 2, 3)
