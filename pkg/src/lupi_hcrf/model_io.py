"""Versioned JSON persistence for trained models.

Floats are written with ``repr`` precision, so every numeric field reloads
bit-exactly and a model saved twice produces identical bytes.
"""

from __future__ import annotations

import json

import numpy as np

from .crf import HCRFConfig, ModelParams
from .fusion import FusionMap
from .robust_t import StudentTJoint
from .seqdata import Scaler, atomic_write_text
from .train import TrainedModel

FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


def model_to_dict(model: TrainedModel) -> dict:
    cfg = model.config
    return {
        "format_version": FORMAT_VERSION,
        "label_vocab": list(model.label_vocab),
        "config": {"n_labels": cfg.n_labels, "n_states": cfg.n_states,
                   "dim_regular": cfg.dim_regular, "dim_privileged": cfg.dim_privileged},
        "params": model.params.pack().tolist(),
        "scaler": None if model.scaler is None else model.scaler.to_dict(),
        "t_joint": None if model.t_joint is None else model.t_joint.to_dict(),
        "fusion": None if model.fusion is None else model.fusion.to_dict(),
        "train_log": [list(e) for e in model.train_log],
        "metadata": model.meta,
    }


def model_from_dict(d: dict) -> TrainedModel:
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format_version {version!r}")
    try:
        config = HCRFConfig(**d["config"])
        flat = np.array(d["params"], dtype=float)
        if flat.shape != (config.n_params,):
            raise ModelFileError(f"params has {flat.size} entries, config needs {config.n_params}")
        vocab = [str(v) for v in d["label_vocab"]]
        if len(vocab) != config.n_labels:
            raise ModelFileError("label_vocab length does not match n_labels")
        scaler = None if d.get("scaler") is None else Scaler.from_dict(d["scaler"])
        t_joint = None if d.get("t_joint") is None else StudentTJoint.from_dict(d["t_joint"])
        fusion = None if d.get("fusion") is None else FusionMap.from_dict(d["fusion"])
    except (KeyError, TypeError) as exc:
        raise ModelFileError(f"malformed model file: {exc}") from exc
    if t_joint is not None and (t_joint.dim_privileged != config.dim_privileged
                                or t_joint.dim != config.dim_regular + config.dim_privileged):
        raise ModelFileError("t_joint dimensions do not match config")
    if fusion is not None and fusion.gamma.shape != (config.dim_regular, config.dim_privileged):
        raise ModelFileError("fusion gamma shape does not match config")
    if scaler is not None and scaler.mean.shape != (config.dim_regular,):
        raise ModelFileError("scaler width does not match config")
    log = [(int(i), float(f), float(g)) for i, f, g in d.get("train_log", [])]
    return TrainedModel(config, ModelParams.unpack(flat, config), vocab, scaler, t_joint,
                        fusion, log, dict(d.get("metadata", {})))


def dumps_model(model: TrainedModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, allow_nan=False) + "\n"


def save_model(model: TrainedModel, path) -> None:
    atomic_write_text(path, dumps_model(model))


def load_model(path) -> TrainedModel:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(d)
