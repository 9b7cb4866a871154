"""Multivariate Student's t: density, EM fit, conditioning and sampling.

Joint vectors are ordered privileged-first: ``v = (xstar, x)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import digamma, gammaln

logger = logging.getLogger(__name__)


class DegenerateDataError(ValueError):
    pass


def _chol(sigma, what="scale matrix"):
    try:
        return linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as exc:
        raise ValueError(f"{what} is not symmetric positive definite") from exc


def _mahalanobis(v, mu, chol):
    diff = np.atleast_2d(v) - mu
    z = linalg.solve_triangular(chol, diff.T, lower=True)
    return np.sum(z * z, axis=0)


def _logpdf(v, mu, chol, nu):
    M = mu.size
    delta = _mahalanobis(v, mu, chol)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return (gammaln(0.5 * (nu + M)) - gammaln(0.5 * nu) - 0.5 * M * np.log(nu * np.pi)
            - 0.5 * logdet - 0.5 * (nu + M) * np.log1p(delta / nu))


def _squeeze(out, v):
    return float(out[0]) if np.ndim(v) == 1 else out


@dataclass(eq=False)
class StudentTJoint:
    mu: np.ndarray
    sigma: np.ndarray
    nu: float
    dim_privileged: int
    fit_log: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        M = self.mu.size
        if self.sigma.shape != (M, M):
            raise ValueError(f"sigma must be {M} x {M}")
        if not np.allclose(self.sigma, self.sigma.T, rtol=0, atol=1e-12):
            raise ValueError("sigma must be symmetric")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not 0 <= self.dim_privileged < M:
            raise ValueError("dim_privileged must leave at least one regular component")
        self._chol = _chol(self.sigma)

    @property
    def dim(self) -> int:
        return self.mu.size

    def to_dict(self):
        return {"mu": self.mu.tolist(), "sigma": self.sigma.tolist(), "nu": self.nu,
                "dim_privileged": self.dim_privileged}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mu"], dtype=float), np.array(d["sigma"], dtype=float),
                   float(d["nu"]), int(d["dim_privileged"]))


@dataclass(eq=False)
class ConditionalT:
    mu_star: np.ndarray
    sigma_star: np.ndarray
    nu_star: float

    def logpdf(self, v):
        out = _logpdf(v, self.mu_star, _chol(self.sigma_star, "sigma_star"), self.nu_star)
        return _squeeze(out, v)


def logpdf(model: StudentTJoint, v):
    """Log-density of the joint t at one vector ``(M,)`` or a batch ``(N, M)``."""
    v = np.asarray(v, dtype=float)
    return _squeeze(_logpdf(v, model.mu, model._chol, model.nu), v)


# ---------------------------------------------------------------------------
# EM

def _nu_score(nu, delta, M):
    """Derivative (times 2/N) of the observed log-likelihood in nu, other parameters fixed.

    Equals the usual digamma stationarity equation with the E-step weights
    ``(nu + M) / (nu + delta)`` evaluated at the candidate ``nu``.
    """
    w = (nu + M) / (nu + delta)
    return (np.log(0.5 * nu) - digamma(0.5 * nu) + 1.0 + np.mean(np.log(w) - w)
            + digamma(0.5 * (nu + M)) - np.log(0.5 * (nu + M)))


def _update_nu(delta, M, bounds):
    """Root of the nu score equation by bisection in log nu, clipped to ``bounds``."""
    lo, hi = np.log(bounds[0]), np.log(bounds[1])
    if _nu_score(np.exp(hi), delta, M) >= 0:
        return float(bounds[1])
    if _nu_score(np.exp(lo), delta, M) <= 0:
        return float(bounds[0])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _nu_score(np.exp(mid), delta, M) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return float(np.exp(0.5 * (lo + hi)))


def _jittered_chol(sigma, log):
    try:
        return sigma, linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError:
        pass
    M = sigma.shape[0]
    eps = 1e-8 * np.trace(sigma) / M
    for _ in range(12):
        sigma = sigma + eps * np.eye(M)
        log.append({"event": "jitter", "amount": eps})
        logger.info("EM covariance not SPD, added jitter %.3g", eps)
        try:
            return sigma, linalg.cholesky(sigma, lower=True)
        except linalg.LinAlgError:
            eps *= 10
    raise DegenerateDataError("degenerate sample covariance (jitter failed)")


def fit_em(samples, dim_privileged: int = 0, max_iters: int = 200, tol: float = 1e-8,
           nu_bounds=(0.5, 1e6), nu_init: float = 10.0, fix_nu: float | None = None
           ) -> StudentTJoint:
    """Maximum-likelihood fit of a single multivariate t by EM.

    Each iteration reweights samples by ``(nu + M) / (nu + delta_i)``, updates
    the location and scale, then maximizes the likelihood over ``nu`` with the
    new location and scale held fixed (the ECME variant).

    Parameters
    ----------
    samples : array, shape (N, M)
    dim_privileged : int
        Number of leading components treated as the privileged block.
    tol : float
        Stop when the per-sample log-likelihood gain drops below this.
    fix_nu : float, optional
        Hold the degrees of freedom fixed (``1e6`` gives a Gaussian fit).

    The returned model's ``fit_log`` holds one entry per iteration with the
    log-likelihood of the updated parameters.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2:
        raise ValueError("samples must be an N x M matrix")
    N, M = X.shape
    if N <= M:
        raise ValueError(f"too few samples: need more than {M}, got {N}")
    if not np.all(np.isfinite(X)):
        raise ValueError("samples contain non-finite values")
    var = X.var(axis=0)
    scale = np.maximum(1.0, np.abs(X).max(axis=0)) ** 2
    flat = np.flatnonzero(var <= 1e-14 * scale)
    if flat.size:
        raise DegenerateDataError(
            f"degenerate sample covariance: dimension {int(flat[0])} has zero variance")

    mu = X.mean(axis=0)
    sigma = np.cov(X, rowvar=False, bias=True).reshape(M, M)
    try:
        chol = linalg.cholesky(sigma, lower=True)
    except linalg.LinAlgError as exc:
        raise DegenerateDataError("degenerate sample covariance: columns are collinear") from exc
    nu = float(fix_nu) if fix_nu is not None else float(nu_init)
    log = []
    ll = float(np.sum(_logpdf(X, mu, chol, nu)))
    log.append({"iter": 0, "loglik": ll, "nu": nu})

    for it in range(1, max_iters + 1):
        delta = _mahalanobis(X, mu, chol)
        u = (nu + M) / (nu + delta)
        mu = u @ X / u.sum()
        diff = X - mu
        sigma = (diff.T * u) @ diff / N
        sigma = 0.5 * (sigma + sigma.T)
        sigma, chol = _jittered_chol(sigma, log)
        ll_new = float(np.sum(_logpdf(X, mu, chol, nu)))
        if fix_nu is None:
            cand = _update_nu(_mahalanobis(X, mu, chol), M, nu_bounds)
            ll_cand = float(np.sum(_logpdf(X, mu, chol, cand)))
            # keep the old nu if bisection landed on a non-improving point
            if ll_cand >= ll_new:
                nu, ll_new = cand, ll_cand
        log.append({"iter": it, "loglik": ll_new, "nu": nu})
        converged = (ll_new - ll) < tol * N
        ll = ll_new
        if converged:
            break
    model = StudentTJoint(mu, sigma, nu, dim_privileged)
    model.fit_log = log
    return model


# ---------------------------------------------------------------------------
# Conditioning on the regular block

def _blocks(model: StudentTJoint):
    p = model.dim_privileged
    S = model.sigma
    return p, S[:p, :p], S[:p, p:], S[p:, p:]


def condition(model: StudentTJoint, x_observed) -> ConditionalT:
    """Distribution of the privileged block given the regular block ``x``."""
    x = np.asarray(x_observed, dtype=float)
    p, s11, s12, s22 = _blocks(model)
    mx = model.dim - p
    if x.shape != (mx,):
        raise ValueError(f"x_observed must have length {mx}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x_observed must be finite")
    c22 = _chol(s22, "regular block of sigma")
    diff = x - model.mu[p:]
    w = linalg.cho_solve((c22, True), diff)
    delta = float(diff @ w)
    mu_star = model.mu[:p] + s12 @ w
    schur = s11 - s12 @ linalg.cho_solve((c22, True), s12.T)
    schur = 0.5 * (schur + schur.T)
    sigma_star = (model.nu + delta) / (model.nu + mx) * schur
    return ConditionalT(mu_star, sigma_star, model.nu + mx)


def conditional_means(model: StudentTJoint, X) -> np.ndarray:
    """Row-wise conditional means of the privileged block, shape ``(T, p)``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p, _, s12, s22 = _blocks(model)
    c22 = _chol(s22, "regular block of sigma")
    w = linalg.cho_solve((c22, True), (X - model.mu[p:]).T)
    return model.mu[:p] + (s12 @ w).T


def conditional_mean(cond: ConditionalT) -> np.ndarray:
    if not cond.nu_star > 1:
        raise ValueError(f"conditional mean undefined for nu_star={cond.nu_star} <= 1")
    return cond.mu_star.copy()


def sample(cond: ConditionalT, n: int, seed=None) -> np.ndarray:
    """Draw ``n`` vectors as ``mu + L z sqrt(nu / g)`` with ``g ~ chi2(nu)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    return _draw(cond, n, rng)


def _draw(cond: ConditionalT, n, rng):
    L = _chol(cond.sigma_star, "sigma_star")
    z = rng.standard_normal((n, cond.mu_star.size))
    g = rng.chisquare(cond.nu_star, size=n)
    return cond.mu_star + (z @ L.T) * np.sqrt(cond.nu_star / g)[:, None]
