"""Parameters and potentials of the chain-structured hidden CRF.

The unary score of hidden state ``a`` at frame ``j`` under label ``lam`` is::

    theta1[lam, a] + theta2[a] . x_j + theta3[a] . xstar_j

and the transition score between consecutive states is ``omega[lam, a, b]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class HCRFConfig:
    n_labels: int
    n_states: int
    dim_regular: int
    # 0 means a model without a privileged channel (regular-only HCRF)
    dim_privileged: int = 0

    def __post_init__(self):
        if self.n_labels < 2:
            raise ValueError("n_labels must be >= 2")
        if self.n_states < 1:
            raise ValueError("n_states must be >= 1")
        if self.dim_regular < 1:
            raise ValueError("dim_regular must be >= 1")
        if self.dim_privileged < 0:
            raise ValueError("dim_privileged must be >= 0")

    @property
    def shapes(self):
        Y, H = self.n_labels, self.n_states
        return {
            "theta1": (Y, H),
            "theta2": (H, self.dim_regular),
            "theta3": (H, self.dim_privileged),
            "omega": (Y, H, H),
        }

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes.values())


_BLOCKS = ("theta1", "theta2", "theta3", "omega")


@dataclass(eq=False)
class ModelParams:
    theta1: np.ndarray
    theta2: np.ndarray
    theta3: np.ndarray
    omega: np.ndarray

    @classmethod
    def zeros(cls, config: HCRFConfig) -> "ModelParams":
        return cls(**{k: np.zeros(s) for k, s in config.shapes.items()})

    @classmethod
    def random(cls, config: HCRFConfig, scale: float = 0.01, seed=0) -> "ModelParams":
        rng = np.random.default_rng(seed)
        return cls.unpack(scale * rng.standard_normal(config.n_params), config)

    def pack(self) -> np.ndarray:
        """Flatten to ``[theta1, theta2, theta3, omega]``, each row-major."""
        return np.concatenate([getattr(self, k).ravel() for k in _BLOCKS])

    @classmethod
    def unpack(cls, flat, config: HCRFConfig) -> "ModelParams":
        flat = np.asarray(flat, dtype=float)
        if flat.shape != (config.n_params,):
            raise ValueError(f"flat vector has shape {flat.shape}, expected ({config.n_params},)")
        blocks = {}
        offset = 0
        for k in _BLOCKS:
            shape = config.shapes[k]
            size = int(np.prod(shape))
            blocks[k] = flat[offset:offset + size].reshape(shape).copy()
            offset += size
        return cls(**blocks)

    def check(self, config: HCRFConfig) -> None:
        for k, shape in config.shapes.items():
            arr = getattr(self, k)
            if arr.shape != shape:
                raise ValueError(f"{k} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{k} contains non-finite values")

    def scaled(self, alpha: float) -> "ModelParams":
        return ModelParams(*(alpha * getattr(self, k) for k in _BLOCKS))

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in _BLOCKS)


def _check_inputs(params, config, frames, privileged):
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2 or frames.shape[1] != config.dim_regular:
        raise ValueError(f"frames must be T x {config.dim_regular}, got {frames.shape}")
    if privileged is not None:
        privileged = np.asarray(privileged, dtype=float)
        if privileged.shape != (frames.shape[0], config.dim_privileged):
            raise ValueError(
                f"privileged must be {frames.shape[0]} x {config.dim_privileged}, "
                f"got {privileged.shape}")
    return frames, privileged


def unary_scores(params: ModelParams, config: HCRFConfig, frames, privileged=None) -> np.ndarray:
    """Per-frame unary table of shape ``(T, n_labels, n_states)``.

    When ``privileged`` is None the privileged term contributes nothing.
    """
    frames, privileged = _check_inputs(params, config, frames, privileged)
    obs = frames @ params.theta2.T
    if privileged is not None:
        obs = obs + privileged @ params.theta3.T
    return params.theta1[None, :, :] + obs[:, None, :]


def pairwise_scores(params: ModelParams, config: HCRFConfig, label: int) -> np.ndarray:
    if not 0 <= label < config.n_labels:
        raise ValueError(f"label {label} out of range [0, {config.n_labels})")
    return params.omega[label]


def energy(params: ModelParams, config: HCRFConfig, label: int, states, frames,
           privileged=None) -> float:
    """Score of one (label, hidden path) configuration."""
    states = np.asarray(states, dtype=int)
    frames = np.asarray(frames, dtype=float)
    if states.shape != (frames.shape[0],):
        raise ValueError("need one hidden state per frame")
    if np.any(states < 0) or np.any(states >= config.n_states):
        raise ValueError(f"state index out of range [0, {config.n_states})")
    unary = unary_scores(params, config, frames, privileged)
    trans = pairwise_scores(params, config, label)
    total = unary[np.arange(states.size), label, states].sum()
    total += trans[states[:-1], states[1:]].sum()
    return float(total)
