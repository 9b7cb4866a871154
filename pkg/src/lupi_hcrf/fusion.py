"""Multi-output ridge map from regular features onto the privileged space."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg


@dataclass(eq=False)
class FusionMap:
    gamma: np.ndarray
    eta: float

    def to_dict(self):
        return {"gamma": self.gamma.tolist(), "eta": self.eta}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["gamma"], dtype=float), float(d["eta"]))


def default_eta_grid(n: int = 9) -> np.ndarray:
    return np.logspace(-4, 0, n)


def fit_cls(x, a, eta: float) -> FusionMap:
    """Solve ``(x^T x + eta I) gamma = x^T a`` with a symmetric solver."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if x.shape[0] != a.shape[0] or x.shape[0] < 1:
        raise ValueError("x and a need the same positive number of rows")
    if eta < 0:
        raise ValueError("eta must be non-negative")
    gram = x.T @ x
    gram[np.diag_indices_from(gram)] += eta
    rhs = x.T @ a
    if eta == 0 and np.linalg.matrix_rank(x) < x.shape[1]:
        raise linalg.LinAlgError("singular system: x^T x is not invertible at eta=0")
    try:
        gamma = linalg.solve(gram, rhs, assume_a="sym")
    except linalg.LinAlgError as exc:
        raise linalg.LinAlgError(f"singular system at eta={eta}") from exc
    return FusionMap(gamma, float(eta))


def predict_privileged(fmap: FusionMap, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != fmap.gamma.shape[0]:
        raise ValueError(f"x has width {x.shape[1]}, map expects {fmap.gamma.shape[0]}")
    return x @ fmap.gamma


def select_eta(x, a, grid=None, k: int = 5, seed: int = 0):
    """Pick eta by k-fold CV on mean held-out squared error; ties go to the smaller eta.

    Returns ``(eta, table)`` where ``table`` is a list of ``(eta, cv_error)``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    grid = default_eta_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("eta grid is empty")
    if k < 2:
        raise ValueError("k must be at least 2")
    n = x.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds number of rows {n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    table = []
    for eta in grid:
        errs = []
        for f in range(k):
            test = folds[f]
            train = np.concatenate([folds[g] for g in range(k) if g != f])
            fmap = fit_cls(x[train], a[train], eta)
            resid = x[test] @ fmap.gamma - a[test]
            errs.append(np.mean(np.sum(resid ** 2, axis=1)))
        table.append((float(eta), float(np.mean(errs))))
    best = min(range(len(table)), key=lambda i: (table[i][1], table[i][0]))
    return table[best][0], table
