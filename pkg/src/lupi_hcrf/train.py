"""Training, test-time prediction and model selection for the privileged HCRF."""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import fusion as fusion_mod
from . import robust_t
from .crf import HCRFConfig, ModelParams
from .inference import chain_log_partition, forward_backward, logsumexp
from .optim import lbfgs_minimize
from .seqdata import Dataset, Scaler, split_folds, standardize

logger = logging.getLogger(__name__)

STRATEGIES = {
    "mean": "mean", "mean-substitution": "mean",
    "mc": "mc", "monte-carlo": "mc",
    "regression": "regression",
    "drop": "drop", "drop-privileged": "drop",
}


class PrerequisiteError(ValueError):
    """A training or prediction path is missing the inputs it needs."""


class NumericalFailure(RuntimeError):
    """A numerical error raised inside a named pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


_NUMERICAL = (FloatingPointError, linalg.LinAlgError, robust_t.DegenerateDataError)


@contextmanager
def stage(name: str):
    """Re-raise numerical errors from the enclosed block as :class:`NumericalFailure`."""
    try:
        yield
    except _NUMERICAL as exc:
        raise NumericalFailure(name, exc) from exc


@dataclass
class TrainConfig:
    sigma: float = 1.0
    n_states: int = 4
    max_iters: int = 400
    grad_tol: float = 1e-5
    memory: int = 10
    seed: int = 0
    init_scale: float = 0.01

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.memory < 1:
            raise ValueError("memory must be >= 1")
        if self.n_states < 1:
            raise ValueError("n_states must be >= 1")


@dataclass
class RobustOptions:
    max_iters: int = 200
    tol: float = 1e-8
    nu_bounds: tuple[float, float] = (0.5, 1e6)
    # fixing nu at 1e6 turns the fit into a Gaussian one
    fix_nu: float | None = None


@dataclass
class FusionOptions:
    eta_grid: list[float] | None = None
    folds: int = 5
    seed: int = 0


@dataclass(eq=False)
class TrainedModel:
    config: HCRFConfig
    params: ModelParams
    label_vocab: list[str]
    scaler: Scaler | None = None
    t_joint: robust_t.StudentTJoint | None = None
    fusion: fusion_mod.FusionMap | None = None
    train_log: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Objective

class _LengthGroups:
    """Sequences stacked into equal-length batches so inference runs vectorized."""

    def __init__(self, dataset: Dataset, use_privileged: bool):
        by_len = {}
        for i, s in enumerate(dataset.samples):
            by_len.setdefault(s.length, []).append(i)
        self.groups = []
        for T in sorted(by_len):
            idx = by_len[T]
            X = np.stack([dataset.samples[i].frames for i in idx])
            XS = None
            if use_privileged:
                XS = np.stack([dataset.samples[i].privileged for i in idx])
            y = np.array([dataset.samples[i].label for i in idx])
            ids = [dataset.samples[i].id for i in idx]
            self.groups.append((X, XS, y, ids))


def _group_unary(params: ModelParams, X, XS):
    """Unary scores shaped ``(B, Y, T, H)``."""
    obs = X @ params.theta2.T
    if XS is not None:
        obs = obs + XS @ params.theta3.T
    return params.theta1[None, :, None, :] + obs[:, None, :, :]


def _objective(flat, config: HCRFConfig, groups: _LengthGroups, sigma: float):
    params = ModelParams.unpack(flat, config)
    value = 0.0
    g1 = np.zeros_like(params.theta1)
    g2 = np.zeros_like(params.theta2)
    g3 = np.zeros_like(params.theta3)
    gw = np.zeros_like(params.omega)
    for X, XS, y, ids in groups.groups:
        unary = _group_unary(params, X, XS)
        logz, node, edge = forward_backward(unary, params.omega)
        if not np.all(np.isfinite(logz)):
            bad = ids[int(np.flatnonzero(~np.all(np.isfinite(logz), axis=1))[0])]
            raise FloatingPointError(f"non-finite log-partition for sample {bad!r}")
        total = logsumexp(logz, axis=1)
        rows = np.arange(y.size)
        value += float(np.sum(total - logz[rows, y]))
        # free-minus-clamped weights: posterior minus one-hot label
        c = np.exp(logz - total[:, None])
        c[rows, y] -= 1.0
        g1 += np.einsum("by,byth->yh", c, node)
        weighted = np.einsum("by,byth->bth", c, node)
        g2 += np.einsum("bth,btd->hd", weighted, X)
        if XS is not None:
            g3 += np.einsum("bth,btd->hd", weighted, XS)
        if edge.shape[2]:
            gw += np.einsum("by,bytij->yij", c, edge)
    grad = np.concatenate([g1.ravel(), g2.ravel(), g3.ravel(), gw.ravel()])
    value += float(flat @ flat) / (2.0 * sigma ** 2)
    grad += flat / sigma ** 2
    return value, grad


def make_objective(dataset: Dataset, config: HCRFConfig, sigma: float,
                   use_privileged: bool = True):
    """Return ``f(flat) -> (value, grad)`` for the regularized negative log-likelihood."""
    if use_privileged and not dataset.has_privileged:
        raise PrerequisiteError("privileged features required for training")
    groups = _LengthGroups(dataset, use_privileged)
    return lambda flat: _objective(np.asarray(flat, dtype=float), config, groups, sigma)


def nll_and_grad(params, config: HCRFConfig, dataset: Dataset, sigma: float):
    """Regularized negative conditional log-likelihood and its gradient.

    ``params`` may be a :class:`ModelParams` or its packed vector. The data
    term sums ``-log p(y_i | x_i, xstar_i)``; the prior adds
    ``|w|^2 / (2 sigma^2)``.
    """
    flat = params.pack() if isinstance(params, ModelParams) else np.asarray(params, dtype=float)
    use_priv = config.dim_privileged > 0
    return make_objective(dataset, config, sigma, use_privileged=use_priv)(flat)


# ---------------------------------------------------------------------------
# Training

def _fit_crf(data: Dataset, config: HCRFConfig, tconfig: TrainConfig, use_privileged: bool):
    objective = make_objective(data, config, tconfig.sigma, use_privileged)
    x0 = ModelParams.random(config, tconfig.init_scale, tconfig.seed).pack()
    x, log = lbfgs_minimize(objective, x0, max_iters=tconfig.max_iters,
                            grad_tol=tconfig.grad_tol, memory=tconfig.memory)
    logger.info("CRF training: %d iterations, NLL %.6g, status %s",
                len(log) - 1, log[-1][1], log.status)
    return ModelParams.unpack(x, config), log


def _pooled(data: Dataset):
    X = np.vstack([s.frames for s in data.samples])
    XS = np.vstack([s.privileged for s in data.samples])
    return X, XS


def train(dataset: Dataset, config: HCRFConfig | None = None, tconfig: TrainConfig | None = None,
          robust_opts: RobustOptions | None = None, fusion_opts: FusionOptions | None = None,
          standardize_features: bool = True, fit_t: bool = True,
          fit_fusion: bool = True) -> TrainedModel:
    """Train the privileged HCRF and the test-time models for the privileged channel.

    The CRF weights are fitted on regular and privileged features together.
    Afterwards a joint Student's t is fitted on the pooled per-frame vectors
    ``(xstar_j, x_j)`` and a ridge map ``x_j -> xstar_j`` is fitted on the
    same frames; both are used at prediction time when ``xstar`` is absent.
    """
    if not dataset.has_privileged:
        raise PrerequisiteError("privileged features required for training")
    tconfig = tconfig or TrainConfig()
    robust_opts = robust_opts or RobustOptions()
    fusion_opts = fusion_opts or FusionOptions()
    if config is None:
        config = HCRFConfig(len(dataset.label_vocab), tconfig.n_states,
                            dataset.dim_regular, dataset.dim_privileged)
    if (config.n_labels != len(dataset.label_vocab) or config.dim_regular != dataset.dim_regular
            or config.dim_privileged != dataset.dim_privileged):
        raise ValueError("HCRFConfig does not match the dataset")

    scaler = None
    data = dataset
    if standardize_features:
        data, scaler = standardize(dataset)
    with stage("CRF training"):
        params, log = _fit_crf(data, config, tconfig, use_privileged=True)

    X, XS = _pooled(data)
    t_joint = None
    if fit_t:
        with stage("Student's t fit"):
            t_joint = robust_t.fit_em(np.hstack([XS, X]), dim_privileged=config.dim_privileged,
                                      max_iters=robust_opts.max_iters, tol=robust_opts.tol,
                                      nu_bounds=robust_opts.nu_bounds,
                                      fix_nu=robust_opts.fix_nu)
    fmap = None
    eta_table = None
    if fit_fusion:
        with stage("fusion fit"):
            eta, eta_table = fusion_mod.select_eta(X, XS, fusion_opts.eta_grid,
                                                   k=min(fusion_opts.folds, X.shape[0]),
                                                   seed=fusion_opts.seed)
            fmap = fusion_mod.fit_cls(X, XS, eta)

    meta = {
        "sigma": tconfig.sigma, "n_states": config.n_states, "max_iters": tconfig.max_iters,
        "grad_tol": tconfig.grad_tol, "memory": tconfig.memory, "seed": tconfig.seed,
        "init_scale": tconfig.init_scale, "iterations": len(log) - 1,
        "final_nll": log[-1][1], "status": log.status,
        "standardize": standardize_features,
    }
    if eta_table is not None:
        meta["eta_cv"] = eta_table
    if t_joint is not None:
        meta["t_fit_iterations"] = len([e for e in t_joint.fit_log if "iter" in e]) - 1
    return TrainedModel(config, params, list(dataset.label_vocab), scaler, t_joint, fmap,
                        [tuple(e) for e in log], meta)


def train_hcrf(dataset: Dataset, tconfig: TrainConfig | None = None,
               standardize_features: bool = True) -> TrainedModel:
    """Plain HCRF on the regular channel only (no privileged information anywhere)."""
    tconfig = tconfig or TrainConfig()
    data = dataset.without_privileged() if dataset.has_privileged else dataset
    config = HCRFConfig(len(data.label_vocab), tconfig.n_states, data.dim_regular, 0)
    scaler = None
    if standardize_features:
        data, scaler = standardize(data)
    with stage("CRF training"):
        params, log = _fit_crf(data, config, tconfig, use_privileged=False)
    meta = {"sigma": tconfig.sigma, "n_states": config.n_states, "seed": tconfig.seed,
            "iterations": len(log) - 1, "final_nll": log[-1][1], "status": log.status,
            "standardize": standardize_features}
    return TrainedModel(config, params, list(data.label_vocab), scaler, None, None,
                        [tuple(e) for e in log], meta)


# ---------------------------------------------------------------------------
# Prediction

def _posterior_given(model: TrainedModel, frames, privileged):
    """Label log-posterior for a batch of privileged fills.

    ``privileged`` is None, ``(T, p)``, or ``(S, T, p)``; returns ``(Y,)`` or ``(S, Y)``.
    """
    p = model.params
    obs = frames @ p.theta2.T
    if privileged is not None:
        obs = obs + privileged @ p.theta3.T
    unary = p.theta1[..., :, None, :] + obs[..., None, :, :]
    z = chain_log_partition(unary, p.omega)
    return z - logsumexp(z, axis=-1)[..., None]


def predict(model: TrainedModel, frames, strategy: str = "mean", n_samples: int = 100,
            seed: int = 0, batch_size: int = 5000):
    """Predict the label of one sequence of regular frames.

    Strategies for the missing privileged channel:

    ``mean``
        substitute the t-conditional mean of ``xstar_j`` given ``x_j``;
    ``mc``
        average the label posterior over ``n_samples`` framewise draws from
        the t-conditional;
    ``regression``
        substitute the ridge prediction ``x_j @ gamma``;
    ``drop``
        leave the privileged term out.

    Returns ``(label_index, posterior)`` where ``posterior`` sums to one.
    Ties resolve to the lowest label index.
    """
    try:
        strategy = STRATEGIES[strategy]
    except KeyError:
        raise ValueError(f"unknown strategy {strategy!r}") from None
    frames = np.asarray(frames, dtype=float)
    if frames.ndim != 2 or frames.shape[1] != model.config.dim_regular:
        raise ValueError(f"frames must be T x {model.config.dim_regular}")
    if model.scaler is not None:
        frames = model.scaler.transform_frames(frames)

    if strategy == "drop":
        logpost = _posterior_given(model, frames, None)
    elif strategy == "regression":
        if model.fusion is None:
            raise PrerequisiteError("strategy 'regression' needs a fitted fusion map")
        logpost = _posterior_given(model, frames, fusion_mod.predict_privileged(model.fusion, frames))
    else:
        if model.t_joint is None:
            raise PrerequisiteError(f"strategy {strategy!r} needs a fitted Student's t model")
        if strategy == "mean":
            nu_star = model.t_joint.nu + model.config.dim_regular
            if not nu_star > 1:
                raise ValueError(f"conditional mean undefined for nu_star={nu_star} <= 1")
            logpost = _posterior_given(model, frames,
                                       robust_t.conditional_means(model.t_joint, frames))
        else:
            logpost = _monte_carlo(model, frames, n_samples, seed, batch_size)
    post = np.exp(logpost)
    post /= post.sum()
    return int(np.argmax(post)), post


def _monte_carlo(model, frames, n_samples, seed, batch_size):
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    joint = model.t_joint
    pdim = joint.dim_privileged
    mx = joint.dim - pdim
    s22 = joint.sigma[pdim:, pdim:]
    s12 = joint.sigma[:pdim, pdim:]
    c22 = linalg.cholesky(s22, lower=True)
    diff = frames - joint.mu[pdim:]
    w = linalg.cho_solve((c22, True), diff.T)
    delta = np.sum(diff.T * w, axis=0)
    mu_star = joint.mu[:pdim] + (s12 @ w).T
    schur = joint.sigma[:pdim, :pdim] - s12 @ linalg.cho_solve((c22, True), s12.T)
    L = linalg.cholesky(0.5 * (schur + schur.T), lower=True)
    nu_star = joint.nu + mx
    # per-frame scale of the conditional: (nu + delta_j) / (nu + M_x) times the Schur block
    root = np.sqrt((joint.nu + delta) / nu_star)

    rng = np.random.default_rng(seed)
    T = frames.shape[0]
    acc = np.zeros(model.config.n_labels)
    done = 0
    while done < n_samples:
        S = min(batch_size, n_samples - done)
        z = rng.standard_normal((S, T, pdim))
        g = rng.chisquare(nu_star, size=(S, T))
        draws = mu_star + (z @ L.T) * (root[None, :] * np.sqrt(nu_star / g))[..., None]
        acc += np.exp(_posterior_given(model, frames, draws)).sum(axis=0)
        done += S
    return np.log(acc / n_samples)


def predict_dataset(model: TrainedModel, dataset: Dataset, strategy: str = "mean",
                    n_samples: int = 100, seed: int = 0):
    """Predict every sample; returns ``(labels, posteriors)`` arrays."""
    labels, posts = [], []
    for s in dataset.samples:
        lab, post = predict(model, s.frames, strategy, n_samples, seed)
        labels.append(lab)
        posts.append(post)
    return np.array(labels, dtype=int), np.array(posts)


def accuracy(model: TrainedModel, dataset: Dataset, strategy: str = "mean", **kw) -> float:
    pred, _ = predict_dataset(model, dataset, strategy, **kw)
    return float(np.mean(pred == dataset.labels))


# ---------------------------------------------------------------------------
# Model selection

@dataclass
class CVResult:
    best_n_states: int
    best_sigma: float
    best_accuracy: float
    rows: list[dict]
    summary: list[dict]
    overall_mean: float


def cross_validate(dataset: Dataset, state_grid=range(4, 21), sigma_grid=None, k: int = 5,
                   seed: int = 0, tconfig: TrainConfig | None = None, strategy: str = "mean",
                   robust_opts: RobustOptions | None = None,
                   fusion_opts: FusionOptions | None = None,
                   standardize_features: bool = True) -> CVResult:
    """Grid search over hidden-state count and prior scale with stratified k-fold CV.

    Every grid point is scored by mean held-out accuracy. The best point
    maximizes it, ties going to fewer states and then to smaller sigma.
    ``overall_mean`` averages the held-out accuracy over all grid points.
    """
    state_grid = list(state_grid)
    sigma_grid = [10.0 ** e for e in range(-3, 4)] if sigma_grid is None else list(sigma_grid)
    if not state_grid or not sigma_grid:
        raise ValueError("grids must be nonempty")
    base = tconfig or TrainConfig()
    folds = split_folds(dataset, k, seed)
    rows, summary = [], []
    for h in state_grid:
        for sig in sigma_grid:
            cfg = TrainConfig(sigma=sig, n_states=h, max_iters=base.max_iters,
                              grad_tol=base.grad_tol, memory=base.memory, seed=base.seed,
                              init_scale=base.init_scale)
            accs = []
            for f, (tr, te) in enumerate(folds):
                model = train(dataset.subset(tr), None, cfg, robust_opts, fusion_opts,
                              standardize_features)
                acc = accuracy(model, dataset.subset(te), strategy)
                rows.append({"n_states": h, "sigma": sig, "fold": f, "accuracy": acc})
                accs.append(acc)
                logger.info("cv states=%d sigma=%g fold=%d acc=%.4f", h, sig, f, acc)
            summary.append({"n_states": h, "sigma": sig, "mean_accuracy": float(np.mean(accs)),
                            "std_accuracy": float(np.std(accs))})
    best = max(summary, key=lambda r: (r["mean_accuracy"], -r["n_states"], -r["sigma"]))
    overall = float(np.mean([r["mean_accuracy"] for r in summary]))
    return CVResult(best["n_states"], best["sigma"], best["mean_accuracy"], rows, summary, overall)
