"""Command-line interface: synth, train, predict, eval, cv, fit-fusion.

Exit codes: 0 on success, 1 on a numerical failure (the message names the
stage), 2 on usage or validation errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys

import numpy as np

from . import fusion as fusion_mod
from .model_io import load_model, save_model
from .report import evaluate
from .seqdata import (
    SynthSpec,
    atomic_write_text,
    generate_synthetic,
    load_dataset,
    save_dataset,
    standardize,
)
from .train import (
    STRATEGIES,
    FusionOptions,
    NumericalFailure,
    RobustOptions,
    TrainConfig,
    cross_validate,
    predict,
    stage,
    train,
)

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


class UsageError(ValueError):
    pass


def _require(ok: bool, message: str):
    if not ok:
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list is empty")
    return values


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("list is empty")
    return values


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=1, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# Commands

def cmd_synth(args) -> int:
    _require(args.classes >= 2, "--classes must be >= 2")
    _require(args.states_true >= 1, "--states-true must be >= 1")
    _require(args.seqs >= 1, "--seqs must be >= 1")
    _require(1 <= args.min_len <= args.max_len, "--min-len/--max-len must satisfy 1 <= min <= max")
    _require(args.dim_regular >= 1, "--dim-regular must be >= 1")
    _require(args.dim_privileged >= 1, "--dim-privileged must be >= 1")
    _require(args.regular_noise >= 0, "--regular-noise must be non-negative")
    _require(args.privileged_noise >= 0, "--privileged-noise must be non-negative")
    _require(0.0 <= args.outlier_rate <= 1.0, "--outlier-rate must lie in [0, 1]")
    _require(args.outlier_scale >= 0, "--outlier-scale must be non-negative")
    spec = SynthSpec(n_classes=args.classes, n_states_true=args.states_true,
                     seq_len_range=(args.min_len, args.max_len), dim_regular=args.dim_regular,
                     dim_privileged=args.dim_privileged, regular_noise_sigma=args.regular_noise,
                     privileged_noise_sigma=args.privileged_noise,
                     outlier_rate=args.outlier_rate, outlier_scale=args.outlier_scale,
                     n_sequences_per_class=args.seqs, seed=args.seed)
    ds = generate_synthetic(spec)
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} sequences to {args.out}")
    return EXIT_OK


def _train_options(args, states: int, sigma: float):
    _require(args.max_iters >= 1, "--max-iters must be >= 1")
    _require(args.folds >= 2, "--folds must be >= 2")
    if args.eta_grid is not None:
        _require(all(e >= 0 for e in args.eta_grid), "--eta-grid values must be non-negative")
    if args.fix_nu is not None:
        _require(args.fix_nu > 0, "--fix-nu must be positive")
    tconfig = TrainConfig(sigma=sigma, n_states=states, max_iters=args.max_iters,
                          grad_tol=args.grad_tol, memory=args.memory, seed=args.seed,
                          init_scale=args.init_scale)
    robust = RobustOptions(fix_nu=args.fix_nu)
    fusion = FusionOptions(eta_grid=args.eta_grid, folds=args.folds, seed=args.seed)
    return tconfig, robust, fusion


def cmd_train(args) -> int:
    _require(args.states >= 1, "--states must be >= 1")
    _require(args.sigma > 0, "--sigma must be positive")
    tconfig, robust, fusion = _train_options(args, args.states, args.sigma)
    data = load_dataset(args.data)
    model = train(data, tconfig=tconfig, robust_opts=robust, fusion_opts=fusion,
                  standardize_features=not args.no_standardize)
    model.meta["eta_grid"] = args.eta_grid
    model.meta["fusion_folds"] = args.folds
    model.meta["fix_nu"] = args.fix_nu
    save_model(model, args.out)
    print(f"final NLL: {model.meta['final_nll']!r}")
    print(f"iterations: {model.meta['iterations']} ({model.meta['status']})")
    if model.t_joint is not None:
        print(f"student t nu: {model.t_joint.nu!r}")
    if model.fusion is not None:
        print(f"fusion eta: {model.fusion.eta!r}")
    return EXIT_OK


def cmd_predict(args) -> int:
    _require(args.mc_samples >= 1, "--mc-samples must be >= 1")
    model = load_model(args.model)
    # the privileged field of test records is never read
    data = load_dataset(args.data, privileged=False)
    _require(data.dim_regular == model.config.dim_regular,
             f"data has {data.dim_regular} regular dims, model expects {model.config.dim_regular}")
    lines = []
    with stage("prediction"):
        for s in data.samples:
            lab, post = predict(model, s.frames, args.strategy, n_samples=args.mc_samples,
                                seed=args.mc_seed)
            lines.append(json.dumps({
                "id": s.id,
                "predicted_label": model.label_vocab[lab],
                "posterior": {name: float(p) for name, p in zip(model.label_vocab, post)},
            }))
    atomic_write_text(args.out, "\n".join(lines) + "\n")
    print(f"wrote {len(lines)} predictions to {args.out}")
    return EXIT_OK


def _read_predictions(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                rows.append((str(rec["id"]), str(rec["predicted_label"])))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise UsageError(f"{path}:{lineno}: cannot parse prediction ({exc})") from None
    return rows


def cmd_eval(args) -> int:
    data = load_dataset(args.data, privileged=False)
    rows = _read_predictions(args.predictions)
    _require(bool(rows), f"{args.predictions}: no predictions")
    truth = {s.id: data.label_vocab[s.label] for s in data.samples}
    # a test file may lack some classes the model can still predict
    labels = sorted(set(data.label_vocab) | {name for _, name in rows})
    index = {name: i for i, name in enumerate(labels)}
    seen = set()
    true, pred = [], []
    for sid, name in rows:
        _require(sid in truth, f"prediction id {sid!r} not found in {args.data}")
        _require(sid not in seen, f"duplicate prediction id {sid!r}")
        seen.add(sid)
        true.append(index[truth[sid]])
        pred.append(index[name])
    report = evaluate(true, pred, labels)
    print(report.summary())
    if args.out:
        atomic_write_text(args.out, report.confusion_csv())
        print(f"confusion matrix written to {args.out}")
    else:
        print(report.confusion_csv(), end="")
    return EXIT_OK


def cmd_cv(args) -> int:
    _require(all(h >= 1 for h in args.states), "--states values must be >= 1")
    _require(all(s > 0 for s in args.sigma), "--sigma values must be positive")
    # grid points override n_states and sigma; the rest is shared by every fit
    tconfig, robust, fusion = _train_options(args, args.states[0], args.sigma[0])
    data = load_dataset(args.data)
    res = cross_validate(data, state_grid=args.states, sigma_grid=args.sigma, k=args.folds,
                         seed=args.seed, tconfig=tconfig, strategy=args.strategy,
                         robust_opts=robust, fusion_opts=fusion,
                         standardize_features=not args.no_standardize)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n_states", "sigma", "fold", "accuracy"])
    for r in res.rows:
        writer.writerow([r["n_states"], repr(r["sigma"]), r["fold"], repr(r["accuracy"])])
    for r in res.summary:
        writer.writerow([r["n_states"], repr(r["sigma"]), "mean", repr(r["mean_accuracy"])])
    atomic_write_text(args.out, buf.getvalue())
    best = {"n_states": res.best_n_states, "sigma": res.best_sigma,
            "mean_accuracy": res.best_accuracy, "overall_mean_accuracy": res.overall_mean,
            "folds": args.folds, "seed": args.seed, "strategy": args.strategy}
    if args.best:
        atomic_write_text(args.best, _dump_json(best))
    print(f"best: n_states={res.best_n_states} sigma={res.best_sigma!r} "
          f"mean accuracy={res.best_accuracy:.4f}")
    print(f"average over all configurations: {res.overall_mean:.4f}")
    return EXIT_OK


def cmd_fit_fusion(args) -> int:
    _require(args.folds >= 2, "--folds must be >= 2")
    data = load_dataset(args.data)
    _require(data.has_privileged, "privileged features required for fitting the fusion map")
    scaler = None
    if not args.no_standardize:
        data, scaler = standardize(data)
    X = np.vstack([s.frames for s in data.samples])
    XS = np.vstack([s.privileged for s in data.samples])
    _require(args.folds <= X.shape[0], f"--folds exceeds the number of frames ({X.shape[0]})")
    with stage("fusion fit"):
        eta, table = fusion_mod.select_eta(X, XS, args.eta_grid, k=args.folds, seed=args.seed)
        fmap = fusion_mod.fit_cls(X, XS, eta)
    out = {"format_version": 1, "fusion": fmap.to_dict(),
           "cv_table": [list(row) for row in table],
           "scaler": None if scaler is None else scaler.to_dict()}
    atomic_write_text(args.out, _dump_json(out))
    print(f"selected eta: {eta!r}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser

def _add_train_flags(p, grid: bool):
    if grid:
        p.add_argument("--states", type=_int_list, default=list(range(4, 21)),
                       help="comma-separated hidden-state counts (default 4..20)")
        p.add_argument("--sigma", type=_float_list, default=[10.0 ** e for e in range(-3, 4)],
                       help="comma-separated prior scales (default 1e-3..1e3 by decades)")
    else:
        p.add_argument("--states", type=int, default=4, help="number of hidden states")
        p.add_argument("--sigma", type=float, default=1.0, help="Gaussian prior scale")
    p.add_argument("--max-iters", type=int, default=400)
    p.add_argument("--grad-tol", type=float, default=1e-5)
    p.add_argument("--memory", type=int, default=10, help="L-BFGS history length")
    p.add_argument("--init-scale", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eta-grid", type=_float_list, default=None,
                   help="comma-separated ridge penalties (default 9 log-spaced in [1e-4, 1])")
    p.add_argument("--fix-nu", type=float, default=None,
                   help="hold the t degrees of freedom fixed (1e6 gives a Gaussian)")
    p.add_argument("--no-standardize", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lupi-hcrf",
                                     description="Hidden CRF with training-only privileged features.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--states-true", type=int, default=3)
    p.add_argument("--seqs", type=int, default=20, help="sequences per class")
    p.add_argument("--min-len", type=int, default=10)
    p.add_argument("--max-len", type=int, default=20)
    p.add_argument("--dim-regular", type=int, default=4)
    p.add_argument("--dim-privileged", type=int, default=2)
    p.add_argument("--regular-noise", type=float, default=1.0)
    p.add_argument("--privileged-noise", type=float, default=0.1)
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--outlier-scale", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on data with privileged features")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="model JSON path")
    _add_train_flags(p, grid=False)
    p.add_argument("--folds", type=int, default=5, help="folds for the ridge penalty search")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="label sequences from regular features only")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="predictions JSONL path")
    p.add_argument("--strategy", choices=sorted(STRATEGIES), default="mean")
    p.add_argument("--mc-samples", type=int, default=100)
    p.add_argument("--mc-seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against labeled data")
    p.add_argument("--predictions", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="confusion matrix CSV path (printed if omitted)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="grid search with stratified k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--best", help="best-configuration JSON path")
    _add_train_flags(p, grid=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--strategy", choices=sorted(STRATEGIES), default="mean")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("fit-fusion", help="fit the ridge map from regular to privileged features")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eta-grid", type=_float_list, default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-standardize", action="store_true")
    p.set_defaults(func=cmd_fit_fusion)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalFailure as exc:
        print(f"error: numerical failure during {exc.stage}: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
