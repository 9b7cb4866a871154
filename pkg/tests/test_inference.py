import itertools
import math

import numpy as np
import pytest

from lupi_hcrf.crf import HCRFConfig, ModelParams, energy, unary_scores
from lupi_hcrf.inference import (
    _all_paths,
    _path_scores,
    brute_force_marginals,
    brute_force_posterior,
    class_log_partition,
    class_posterior,
    logsumexp,
)

from conftest import random_instance


def test_logsumexp_basics():
    assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)
    assert logsumexp([3.25]) == 3.25
    assert logsumexp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)
    assert logsumexp([-np.inf, -np.inf]) == -np.inf
    with pytest.raises(ValueError):
        logsumexp([])


def test_uniform_chain():
    cfg = HCRFConfig(2, 2, 1, 1)
    p = ModelParams.zeros(cfg)
    x = np.ones((3, 1))
    logz, m = class_log_partition(p, cfg, 0, x, x)
    assert logz == pytest.approx(3 * math.log(2), abs=1e-14)
    np.testing.assert_allclose(m.unary, 0.5, atol=1e-15)
    np.testing.assert_allclose(m.pairwise, 0.25, atol=1e-15)


def test_single_frame(rng):
    cfg, p, x, xs = random_instance(rng, max_T=1)
    u = unary_scores(p, cfg, x, xs)
    for lam in range(cfg.n_labels):
        logz, m = class_log_partition(p, cfg, lam, x, xs)
        assert logz == pytest.approx(logsumexp(u[0, lam]), abs=1e-12)
        assert m.pairwise.shape == (0, cfg.n_states, cfg.n_states)
    np.testing.assert_allclose(class_posterior(p, cfg, x, xs),
                               brute_force_posterior(p, cfg, x, xs)[0], atol=1e-12)


def test_brute_force_zero_params():
    cfg = HCRFConfig(3, 3, 1, 1)
    x = np.zeros((4, 1))
    logpost, logz = brute_force_posterior(ModelParams.zeros(cfg), cfg, x, x)
    np.testing.assert_allclose(logz, 4 * math.log(3), atol=1e-12)
    np.testing.assert_allclose(np.exp(logpost), 1 / 3, atol=1e-15)


def test_brute_force_rejects_large():
    cfg = HCRFConfig(2, 4, 1)
    with pytest.raises(ValueError, match="too large"):
        brute_force_posterior(ModelParams.zeros(cfg), cfg, np.zeros((11, 1)))


def test_brute_force_cross_check_by_explicit_sum(rng):
    """The enumeration oracle itself against an independent per-path summation."""
    cfg = HCRFConfig(2, 2, 2, 1)
    p = ModelParams.random(cfg, 1.0, seed=9)
    x, xs = rng.standard_normal((3, 2)), rng.standard_normal((3, 1))
    _, logz = brute_force_posterior(p, cfg, x, xs)
    for lam in range(2):
        total = 0.0
        for h in itertools.product(range(2), repeat=3):
            s = p.theta1[lam, list(h)].sum()
            s += sum(p.theta2[h[j]] @ x[j] + p.theta3[h[j]] @ xs[j] for j in range(3))
            s += p.omega[lam, h[0], h[1]] + p.omega[lam, h[1], h[2]]
            total += math.exp(s)
        assert logz[lam] == pytest.approx(math.log(total), abs=1e-12)


def test_forward_backward_matches_enumeration(rng):
    worst = 0.0
    for _ in range(100):
        cfg, p, x, xs = random_instance(rng, max_T=6, max_H=4)
        _, bf_logz = brute_force_posterior(p, cfg, x, xs)
        for lam in range(cfg.n_labels):
            logz, _ = class_log_partition(p, cfg, lam, x, xs)
            worst = max(worst, abs(logz - bf_logz[lam]))
    assert worst < 1e-9


def test_marginals_match_enumeration_and_are_consistent(rng):
    for _ in range(30):
        cfg, p, x, xs = random_instance(rng, max_T=5, max_H=3)
        lam = int(rng.integers(cfg.n_labels))
        _, m = class_log_partition(p, cfg, lam, x, xs)
        bf = brute_force_marginals(p, cfg, lam, x, xs)
        np.testing.assert_allclose(m.unary, bf.unary, atol=1e-9)
        np.testing.assert_allclose(m.pairwise, bf.pairwise, atol=1e-9)
        np.testing.assert_allclose(m.unary.sum(axis=1), 1.0, atol=1e-9)
        assert np.all((m.unary >= 0) & (m.unary <= 1 + 1e-12))
        if x.shape[0] > 1:
            np.testing.assert_allclose(m.pairwise.sum(axis=(1, 2)), 1.0, atol=1e-9)
            np.testing.assert_allclose(m.pairwise.sum(axis=2), m.unary[:-1], atol=1e-9)
            np.testing.assert_allclose(m.pairwise.sum(axis=1), m.unary[1:], atol=1e-9)


def test_shift_invariance(rng):
    for _ in range(20):
        cfg, p, x, xs = random_instance(rng)
        lam = int(rng.integers(cfg.n_labels))
        c = float(rng.normal(scale=3.0))
        logz, m = class_log_partition(p, cfg, lam, x, xs)
        shifted = ModelParams(p.theta1.copy(), p.theta2, p.theta3, p.omega)
        shifted.theta1[lam] += c
        logz2, m2 = class_log_partition(shifted, cfg, lam, x, xs)
        assert logz2 - logz == pytest.approx(x.shape[0] * c, abs=1e-11)
        np.testing.assert_allclose(m2.unary, m.unary, atol=1e-12)
        np.testing.assert_allclose(m2.pairwise, m.pairwise, atol=1e-12)


def test_posterior_properties(rng):
    cfg = HCRFConfig(3, 2, 2, 2)
    x, xs = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    np.testing.assert_allclose(np.exp(class_posterior(ModelParams.zeros(cfg), cfg, x, xs)),
                               1 / 3, atol=1e-15)
    p = ModelParams.random(cfg, 0.5, seed=2)
    p.theta1[0] += 50.0
    assert np.exp(class_posterior(p, cfg, x, xs))[0] > 1 - 1e-12
    for _ in range(50):
        cfg, p, x, xs = random_instance(rng)
        lp = class_posterior(p, cfg, x, xs)
        assert abs(np.exp(lp).sum() - 1) < 1e-12
        np.testing.assert_allclose(lp, brute_force_posterior(p, cfg, x, xs)[0], atol=1e-9)


def test_energy_enumeration_consistency(rng):
    """exp(energy - logZ) over all paths sums to one."""
    cfg, p, x, xs = random_instance(rng, max_T=4, max_H=3)
    logz, _ = class_log_partition(p, cfg, 0, x, xs)
    paths = itertools.product(range(cfg.n_states), repeat=x.shape[0])
    total = sum(math.exp(energy(p, cfg, 0, h, x, xs) - logz) for h in paths)
    assert total == pytest.approx(1.0, abs=1e-12)


def test_enumeration_scores_match_energy(rng):
    for _ in range(20):
        cfg, p, x, xs = random_instance(rng, max_T=4, max_H=3)
        paths = _all_paths(x.shape[0], cfg.n_states, 10**6)
        lam = int(rng.integers(cfg.n_labels))
        direct = _path_scores(p, lam, paths, x, xs)
        via_energy = [energy(p, cfg, lam, h, x, xs) for h in paths]
        np.testing.assert_allclose(direct, via_energy, atol=1e-12)
