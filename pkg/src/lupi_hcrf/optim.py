"""Limited-memory BFGS and a central-difference gradient checker."""

from __future__ import annotations

import logging
from collections import deque

import numpy as np

logger = logging.getLogger(__name__)


class OptimLog(list):
    """List of ``(iteration, value, grad_inf_norm)`` with a termination ``status``."""

    status = "not_started"


def finite_diff_grad(f, at, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar objective, one coordinate at a time.

    ``f`` may return either a scalar or a ``(value, gradient)`` pair.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    x = np.array(at, dtype=float)
    grad = np.empty_like(x)

    def value(v):
        out = f(v)
        return out[0] if isinstance(out, tuple) else out

    for i in range(x.size):
        orig = x[i]
        x[i] = orig + step
        fp = value(x)
        x[i] = orig - step
        fm = value(x)
        x[i] = orig
        grad[i] = (fp - fm) / (2.0 * step)
    return grad


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimizer of the cubic matching values and slopes at ``a`` and ``b``."""
    d1 = ga + gb - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.copysign(np.sqrt(disc), b - a)
    denom = gb - ga + 2.0 * d2
    if denom == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / denom


def _line_search(fun, x, f0, g0, d, alpha0, c1=1e-4, c2=0.9, max_evals=40):
    """Strong Wolfe line search (bracketing phase followed by zoom).

    Returns ``(alpha, f, g, n_evals, wolfe_ok)`` for the accepted step, or
    ``None`` when no step with sufficient decrease was found.
    """
    dphi0 = float(g0 @ d)
    evals = 0
    best = None  # lowest sufficient-decrease point seen, used as fallback

    def phi(alpha):
        nonlocal evals, best
        evals += 1
        f, g = fun(x + alpha * d)
        f = float(f)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, None, np.inf
        if f <= f0 + c1 * alpha * dphi0 and (best is None or f < best[1]):
            best = (alpha, f, g)
        return f, g, float(g @ d)

    def zoom(lo, flo, dlo, hi, fhi, dhi):
        while evals < max_evals:
            width = hi - lo
            trial = None
            if np.isfinite(fhi) and np.isfinite(dhi):
                trial = _cubic_min(lo, flo, dlo, hi, fhi, dhi)
            lo_edge, hi_edge = sorted((lo + 0.1 * width, hi - 0.1 * width))
            if trial is None or not np.isfinite(trial) or not lo_edge <= trial <= hi_edge:
                trial = lo + 0.5 * width
            ft, gt, dt = phi(trial)
            if ft > f0 + c1 * trial * dphi0 or ft >= flo:
                hi, fhi, dhi = trial, ft, dt
            else:
                if abs(dt) <= -c2 * dphi0:
                    return trial, ft, gt, True
                if dt * (hi - lo) >= 0:
                    hi, fhi, dhi = lo, flo, dlo
                lo, flo, dlo = trial, ft, dt
            if abs(hi - lo) <= 1e-16 * max(1.0, abs(lo)):
                break
        return None

    a_prev, f_prev, d_prev = 0.0, f0, dphi0
    alpha = alpha0
    found = None
    for i in range(max_evals):
        fa, ga, da = phi(alpha)
        if fa > f0 + c1 * alpha * dphi0 or (i > 0 and fa >= f_prev):
            found = zoom(a_prev, f_prev, d_prev, alpha, fa, da)
            break
        if abs(da) <= -c2 * dphi0:
            found = (alpha, fa, ga, True)
            break
        if da >= 0:
            found = zoom(alpha, fa, da, a_prev, f_prev, d_prev)
            break
        a_prev, f_prev, d_prev = alpha, fa, da
        alpha *= 2.0
        if evals >= max_evals:
            break
    if found is not None:
        return found[0], found[1], found[2], evals, True
    if best is not None:
        return best[0], best[1], best[2], evals, False
    return None


def lbfgs_minimize(objective, x0, max_iters: int = 400, grad_tol: float = 1e-5,
                   memory: int = 10, callback=None):
    """Minimize a smooth function with limited-memory BFGS.

    Parameters
    ----------
    objective : callable
        ``objective(x) -> (value, gradient)``.
    x0 : array_like
        Starting point.
    max_iters : int
        Cap on accepted iterations.
    grad_tol : float
        Stop once the gradient infinity-norm falls to this level.
    memory : int
        Number of curvature pairs kept for the two-loop recursion.

    Returns
    -------
    x : ndarray
        Final iterate; its value never exceeds the value at ``x0``.
    log : OptimLog
        Entry 0 is the starting point; subsequent entries are accepted steps.
        ``log.status`` is one of ``grad_tol``, ``max_iters``,
        ``line_search_failed``.
    """
    if max_iters < 1 or memory < 1:
        raise ValueError("max_iters and memory must be >= 1")
    x = np.array(x0, dtype=float)
    f, g = objective(x)
    f = float(f)
    g = np.asarray(g, dtype=float)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise FloatingPointError("objective is not finite at the starting point")
    log = OptimLog([(0, f, float(np.max(np.abs(g))) if g.size else 0.0)])
    pairs = deque(maxlen=memory)
    status = "max_iters"

    for it in range(1, max_iters + 1):
        gnorm = np.max(np.abs(g)) if g.size else 0.0
        if gnorm <= grad_tol:
            status = "grad_tol"
            break
        d = _two_loop(g, pairs)
        if g @ d >= 0:
            pairs.clear()
            d = -g
        alpha0 = 1.0 if pairs else min(1.0, 1.0 / np.linalg.norm(g))
        result = _line_search(objective, x, f, g, d, alpha0)
        if result is None and pairs:
            pairs.clear()
            d = -g
            result = _line_search(objective, x, f, g, d, min(1.0, 1.0 / np.linalg.norm(g)))
        if result is None:
            status = "line_search_failed"
            break
        alpha, f_new, g_new, _, _ = result
        s = alpha * d
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(y @ y):
            pairs.append((s, y, 1.0 / sy))
        x = x + s
        f, g = f_new, np.asarray(g_new, dtype=float)
        log.append((it, f, float(np.max(np.abs(g)))))
        if callback is not None:
            callback(it, x, f, g)
    else:
        if np.max(np.abs(g)) <= grad_tol:
            status = "grad_tol"
    log.status = status
    logger.debug("lbfgs stopped after %d iterations: %s", len(log) - 1, status)
    return x, log


def _two_loop(g, pairs):
    q = -g.copy()
    if not pairs:
        return q
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q
