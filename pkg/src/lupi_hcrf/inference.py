"""Exact sum-product inference on the hidden-state chain.

Belief propagation on a chain converges after one forward and one backward
sweep, so everything here is exact. Messages are kept in the log domain.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .crf import HCRFConfig, ModelParams, pairwise_scores, unary_scores


def logsumexp(values, axis=None):
    """Max-shifted log-sum-exp; all ``-inf`` inputs give ``-inf``."""
    a = np.asarray(values, dtype=float)
    if a.size == 0:
        raise ValueError("logsumexp of an empty input")
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


@dataclass
class ChainMarginals:
    log_partition: float
    unary: np.ndarray
    pairwise: np.ndarray


def forward(unary, trans):
    """Forward log-messages.

    ``unary`` has shape ``(..., T, H)``, ``trans`` shape ``(..., H, H)`` with
    matching leading batch dimensions. Returns ``alpha`` of shape ``(..., T, H)``.
    """
    T = unary.shape[-2]
    alpha = np.empty_like(unary)
    alpha[..., 0, :] = unary[..., 0, :]
    for j in range(1, T):
        alpha[..., j, :] = unary[..., j, :] + logsumexp(alpha[..., j - 1, :, None] + trans, axis=-2)
    return alpha


def backward(unary, trans):
    T = unary.shape[-2]
    beta = np.zeros_like(unary)
    for j in range(T - 2, -1, -1):
        nxt = unary[..., j + 1, :] + beta[..., j + 1, :]
        beta[..., j, :] = logsumexp(trans + nxt[..., None, :], axis=-1)
    return beta


def chain_log_partition(unary, trans):
    """Batched log-partition only (forward sweep)."""
    alpha = forward(unary, trans)
    return logsumexp(alpha[..., -1, :], axis=-1)


def forward_backward(unary, trans):
    """Batched log-partition with unary and pairwise marginals.

    Returns ``(logZ, node, edge)`` with ``node`` of shape ``(..., T, H)`` and
    ``edge`` of shape ``(..., T-1, H, H)``.
    """
    alpha = forward(unary, trans)
    beta = backward(unary, trans)
    logz = logsumexp(alpha[..., -1, :], axis=-1)
    node = np.exp(alpha + beta - logz[..., None, None])
    edge_log = (alpha[..., :-1, :, None] + trans[..., None, :, :]
                + (unary[..., 1:, :] + beta[..., 1:, :])[..., None, :]
                - logz[..., None, None, None])
    return logz, node, np.exp(edge_log)


def class_log_partition(params: ModelParams, config: HCRFConfig, label: int, frames,
                        privileged=None) -> tuple[float, ChainMarginals]:
    unary = unary_scores(params, config, frames, privileged)[:, label, :]
    trans = pairwise_scores(params, config, label)
    logz, node, edge = forward_backward(unary, trans)
    logz = float(logz)
    return logz, ChainMarginals(logz, node, edge)


def label_log_partitions(params: ModelParams, config: HCRFConfig, frames, privileged=None):
    """Log-partition for every label at once, shape ``(n_labels,)``."""
    unary = np.swapaxes(unary_scores(params, config, frames, privileged), 0, 1)
    return chain_log_partition(unary, params.omega)


def class_posterior(params: ModelParams, config: HCRFConfig, frames, privileged=None):
    """Log-probability of each label with the hidden path summed out."""
    z = label_log_partitions(params, config, frames, privileged)
    return z - logsumexp(z)


def _all_paths(T: int, H: int, max_paths: int) -> np.ndarray:
    if H ** T > max_paths:
        raise ValueError(f"instance too large: {H}^{T} paths exceeds {max_paths}")
    return np.array(list(itertools.product(range(H), repeat=T)), dtype=int).reshape(-1, T)


def _path_scores(params: ModelParams, label: int, paths, frames, privileged):
    """Energy of every row of ``paths`` by direct summation over frames and edges."""
    T = frames.shape[0]
    j = np.arange(T)
    obs = frames @ params.theta2.T
    if privileged is not None and params.theta3.size:
        obs = obs + np.asarray(privileged, dtype=float) @ params.theta3.T
    scores = params.theta1[label, paths].sum(axis=1) + obs[j, paths].sum(axis=1)
    if T > 1:
        scores += params.omega[label, paths[:, :-1], paths[:, 1:]].sum(axis=1)
    return scores


def brute_force_posterior(params: ModelParams, config: HCRFConfig, frames, privileged=None,
                          max_paths: int = 10**6):
    """Enumerate every hidden path; returns ``(log-posterior, per-label log-partition)``.

    Intended as a reference for small instances only.
    """
    frames = np.asarray(frames, dtype=float)
    paths = _all_paths(frames.shape[0], config.n_states, max_paths)
    logz = np.array([logsumexp(_path_scores(params, lam, paths, frames, privileged))
                     for lam in range(config.n_labels)])
    return logz - logsumexp(logz), logz


def brute_force_marginals(params: ModelParams, config: HCRFConfig, label: int, frames,
                          privileged=None, max_paths: int = 10**6) -> ChainMarginals:
    frames = np.asarray(frames, dtype=float)
    T, H = frames.shape[0], config.n_states
    paths = _all_paths(T, H, max_paths)
    scores = _path_scores(params, label, paths, frames, privileged)
    logz = logsumexp(scores)
    p = np.exp(scores - logz)
    node = np.zeros((T, H))
    edge = np.zeros((max(T - 1, 0), H, H))
    for j in range(T):
        np.add.at(node[j], paths[:, j], p)
    for j in range(T - 1):
        np.add.at(edge[j], (paths[:, j], paths[:, j + 1]), p)
    return ChainMarginals(logz, node, edge)
