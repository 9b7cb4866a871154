import math

import numpy as np
import pytest
from scipy import integrate

from lupi_hcrf.crf import HCRFConfig, ModelParams
from lupi_hcrf.seqdata import Dataset, SequenceSample


def random_instance(rng, max_T=6, max_H=4, max_Y=3, max_dim=4, privileged=True):
    """Random small CRF instance: ``(config, params, frames, privileged)``."""
    Y = int(rng.integers(2, max_Y + 1))
    H = int(rng.integers(1, max_H + 1))
    T = int(rng.integers(1, max_T + 1))
    dx = int(rng.integers(1, max_dim + 1))
    dp = int(rng.integers(1, max_dim + 1)) if privileged else 0
    config = HCRFConfig(Y, H, dx, dp)
    params = ModelParams.unpack(rng.normal(scale=1.0, size=config.n_params), config)
    frames = rng.standard_normal((T, dx))
    priv = rng.standard_normal((T, dp)) if privileged else None
    return config, params, frames, priv


def random_dataset(rng, n, config, max_T=5):
    samples = []
    for i in range(n):
        T = int(rng.integers(1, max_T + 1))
        priv = rng.standard_normal((T, config.dim_privileged)) if config.dim_privileged else None
        samples.append(SequenceSample(f"s{i}", int(rng.integers(config.n_labels)),
                                      rng.standard_normal((T, config.dim_regular)), priv))
    return Dataset(samples, [f"l{k}" for k in range(config.n_labels)])


def marginal_by_quadrature(model, x):
    """Density of the regular block at ``x``, integrating the joint t over the privileged block.

    The privileged block is whitened with its own marginal location and scale
    (``mu_1``, ``Sigma_11``) so the quadrature sees a well-conditioned bump.
    The joint density is written out directly to keep the integrand cheap.
    """
    p, M, nu = model.dim_privileged, model.dim, model.nu
    L = np.linalg.cholesky(model.sigma[:p, :p])
    shift = model.mu[:p]
    prec = np.linalg.inv(model.sigma)
    const = (math.lgamma((nu + M) / 2) - math.lgamma(nu / 2) - M / 2 * math.log(nu * math.pi)
             - 0.5 * np.linalg.slogdet(model.sigma)[1])

    def dens(*z):
        v = np.concatenate([shift + L @ np.array(z), x]) - model.mu
        return math.exp(const - (nu + M) / 2 * math.log1p(v @ prec @ v / nu))

    opts = dict(epsabs=0, epsrel=1e-11, limit=200)
    if p == 1:
        val = integrate.quad(dens, -np.inf, np.inf, **opts)[0]
    else:
        val = integrate.nquad(dens, [[-np.inf, np.inf]] * p, opts=[opts] * p)[0]
    return val * float(np.prod(np.diag(L)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gradient_check_problem(rng):
    """Random small training problem: ``(config, dataset, sigma, flat_params)``."""
    Y = int(rng.integers(2, 4))
    H = int(rng.integers(1, 4))
    config = HCRFConfig(Y, H, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
    data = random_dataset(rng, int(rng.integers(1, 4)), config, max_T=5)
    sigma = float(10 ** rng.uniform(-0.5, 1))
    return config, data, sigma, rng.normal(scale=0.5, size=config.n_params)


def gradient_relative_error(analytic, numeric):
    """Per-coordinate ``|a - n| / max(|a|, |n|)``, taken as 0 where both vanish."""
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    return np.divide(err, scale, out=np.zeros_like(err), where=scale > 0)
