"""Sequence datasets: containers, JSONL persistence, folds, scaling, synthesis."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetError(ValueError):
    """Raised for malformed or inconsistent datasets."""


@dataclass(eq=False)
class SequenceSample:
    """One labeled sequence.

    ``frames`` is ``(T, M_x)``; ``privileged`` is ``(T, M_x*)`` or ``None``.
    """

    id: str
    label: int
    frames: np.ndarray
    privileged: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1 or self.frames.shape[1] < 1:
            raise DatasetError(f"sample {self.id!r}: frames must be a non-empty T x M matrix")
        if not np.all(np.isfinite(self.frames)):
            raise DatasetError(f"sample {self.id!r}: non-finite frame values")
        if self.privileged is not None:
            self.privileged = np.asarray(self.privileged, dtype=float)
            if self.privileged.ndim != 2 or self.privileged.shape[1] < 1:
                raise DatasetError(f"sample {self.id!r}: privileged must be a T x M* matrix")
            if self.privileged.shape[0] != self.frames.shape[0]:
                raise DatasetError(
                    f"sample {self.id!r}: privileged has {self.privileged.shape[0]} rows, "
                    f"frames has {self.frames.shape[0]}"
                )
            if not np.all(np.isfinite(self.privileged)):
                raise DatasetError(f"sample {self.id!r}: non-finite privileged values")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SequenceSample):
            return NotImplemented
        if self.id != other.id or self.label != other.label:
            return False
        if not _arrays_equal(self.frames, other.frames):
            return False
        if (self.privileged is None) != (other.privileged is None):
            return False
        return self.privileged is None or _arrays_equal(self.privileged, other.privileged)


def _arrays_equal(a, b):
    return a.shape == b.shape and np.array_equal(a, b)


@dataclass(eq=False)
class Dataset:
    samples: list[SequenceSample]
    label_vocab: list[str]
    dim_regular: int = field(init=False)
    dim_privileged: int | None = field(init=False)

    def __post_init__(self):
        self.label_vocab = list(self.label_vocab)
        if len(self.label_vocab) < 2:
            raise DatasetError("label vocabulary needs at least 2 labels")
        if not self.samples:
            self.dim_regular = 0
            self.dim_privileged = None
            return
        widths = {s.frames.shape[1] for s in self.samples}
        if len(widths) != 1:
            raise DatasetError(f"inconsistent frame width: {sorted(widths)}")
        self.dim_regular = widths.pop()
        has_priv = [s.privileged is not None for s in self.samples]
        if any(has_priv) and not all(has_priv):
            raise DatasetError("mixed privileged presence")
        if all(has_priv):
            pw = {s.privileged.shape[1] for s in self.samples}
            if len(pw) != 1:
                raise DatasetError(f"inconsistent privileged width: {sorted(pw)}")
            self.dim_privileged = pw.pop()
        else:
            self.dim_privileged = None
        for s in self.samples:
            if not 0 <= s.label < len(self.label_vocab):
                raise DatasetError(f"sample {s.id!r}: label id {s.label} outside vocabulary")

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.label_vocab == other.label_vocab
                and len(self.samples) == len(other.samples)
                and all(a == b for a, b in zip(self.samples, other.samples)))

    @property
    def has_privileged(self) -> bool:
        return self.dim_privileged is not None

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=int)

    def subset(self, indices) -> "Dataset":
        return Dataset([self.samples[i] for i in indices], self.label_vocab)

    def without_privileged(self) -> "Dataset":
        return Dataset([SequenceSample(s.id, s.label, s.frames) for s in self.samples],
                       self.label_vocab)


# ---------------------------------------------------------------------------
# JSONL persistence

def load_dataset(path, privileged: bool = True) -> Dataset:
    """Read a dataset from JSONL; the vocabulary is the sorted set of label strings.

    With ``privileged=False`` the ``"privileged"`` field is never looked at,
    so malformed or corrupted values there cannot affect the result.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records.append((lineno, str(rec["id"]), str(rec["label"]),
                                rec["frames"], rec.get("privileged") if privileged else None))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DatasetError(f"{path}:{lineno}: cannot parse record ({exc})") from exc
    if not records:
        raise DatasetError(f"{path}: dataset has no samples")
    vocab = sorted({r[2] for r in records})
    index = {name: i for i, name in enumerate(vocab)}
    samples = []
    for lineno, sid, label, frames, priv in records:
        try:
            samples.append(SequenceSample(sid, index[label], np.array(frames, dtype=float),
                                          None if priv is None else np.array(priv, dtype=float)))
        except (ValueError, TypeError) as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return Dataset(samples, vocab)


def save_dataset(dataset: Dataset, path) -> None:
    if not dataset.samples:
        raise DatasetError("dataset has no samples")
    lines = []
    for s in dataset.samples:
        rec = {"id": s.id, "label": dataset.label_vocab[s.label], "frames": s.frames.tolist()}
        if s.privileged is not None:
            rec["privileged"] = s.privileged.tolist()
        lines.append(json.dumps(rec))
    atomic_write_text(path, "\n".join(lines) + "\n")


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# Folds and scaling

def split_folds(dataset: Dataset, k: int, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold split.

    Indices of each class are shuffled and dealt round-robin into the folds,
    continuing the deal across classes so fold sizes differ by at most one.
    """
    n = len(dataset)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds number of samples {n}")
    rng = np.random.default_rng(seed)
    labels = dataset.labels
    assignment = np.empty(n, dtype=int)
    cursor = 0
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        assignment[idx] = (cursor + np.arange(idx.size)) % k
        cursor += idx.size
    folds = []
    for f in range(k):
        test = np.flatnonzero(assignment == f)
        train = np.flatnonzero(assignment != f)
        folds.append((train, test))
    return folds


@dataclass(eq=False)
class Scaler:
    """Per-dimension affine standardization for both feature channels."""

    mean: np.ndarray
    std: np.ndarray
    privileged_mean: np.ndarray | None = None
    privileged_std: np.ndarray | None = None

    def transform_frames(self, frames):
        return (np.asarray(frames, dtype=float) - self.mean) / self.std

    def transform_privileged(self, priv):
        return (np.asarray(priv, dtype=float) - self.privileged_mean) / self.privileged_std

    def inverse_frames(self, frames):
        return np.asarray(frames, dtype=float) * self.std + self.mean

    def inverse_privileged(self, priv):
        return np.asarray(priv, dtype=float) * self.privileged_std + self.privileged_mean

    def transform(self, dataset: Dataset) -> Dataset:
        out = []
        for s in dataset.samples:
            priv = None
            if s.privileged is not None and self.privileged_mean is not None:
                priv = self.transform_privileged(s.privileged)
            out.append(SequenceSample(s.id, s.label, self.transform_frames(s.frames), priv))
        return Dataset(out, dataset.label_vocab)

    def inverse(self, dataset: Dataset) -> Dataset:
        out = []
        for s in dataset.samples:
            priv = None
            if s.privileged is not None and self.privileged_mean is not None:
                priv = self.inverse_privileged(s.privileged)
            out.append(SequenceSample(s.id, s.label, self.inverse_frames(s.frames), priv))
        return Dataset(out, dataset.label_vocab)

    def to_dict(self):
        d = {"mean": self.mean.tolist(), "std": self.std.tolist()}
        if self.privileged_mean is not None:
            d["privileged_mean"] = self.privileged_mean.tolist()
            d["privileged_std"] = self.privileged_std.tolist()
        return d

    @classmethod
    def from_dict(cls, d):
        pm = d.get("privileged_mean")
        ps = d.get("privileged_std")
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float),
                   None if pm is None else np.array(pm, dtype=float),
                   None if ps is None else np.array(ps, dtype=float))


def _moments(blocks):
    stacked = np.vstack(blocks)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std == 0] = 1.0
    return mean, std


def standardize(dataset: Dataset) -> tuple[Dataset, Scaler]:
    """Zero-mean, unit-variance scaling over all frames; constant dims keep std 1."""
    if not dataset.samples:
        raise DatasetError("dataset has no samples")
    mean, std = _moments([s.frames for s in dataset.samples])
    pmean = pstd = None
    if dataset.has_privileged:
        pmean, pstd = _moments([s.privileged for s in dataset.samples])
    scaler = Scaler(mean, std, pmean, pstd)
    return scaler.transform(dataset), scaler


# ---------------------------------------------------------------------------
# Synthetic benchmark

@dataclass
class SynthSpec:
    n_classes: int = 2
    n_states_true: int = 3
    seq_len_range: tuple[int, int] = (10, 20)
    dim_regular: int = 4
    dim_privileged: int = 2
    regular_noise_sigma: float = 1.0
    privileged_noise_sigma: float = 0.1
    outlier_rate: float = 0.0
    outlier_scale: float = 20.0
    n_sequences_per_class: int = 20
    seed: int = 0

    def validate(self):
        """Raise ``ValueError`` naming the first offending field."""
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if self.n_states_true < 1:
            raise ValueError("n_states_true must be >= 1")
        tmin, tmax = self.seq_len_range
        if tmin < 1 or tmin > tmax:
            raise ValueError("seq_len_range must satisfy 1 <= T_min <= T_max")
        if self.dim_regular < 1:
            raise ValueError("dim_regular must be >= 1")
        if self.dim_privileged < 1:
            raise ValueError("dim_privileged must be >= 1")
        if self.regular_noise_sigma < 0 or self.privileged_noise_sigma < 0:
            raise ValueError("noise sigmas must be non-negative")
        if not 0.0 <= self.outlier_rate <= 1.0:
            raise ValueError("outlier_rate must lie in [0, 1]")
        if self.outlier_scale < 0:
            raise ValueError("outlier_scale must be non-negative")
        if self.n_sequences_per_class < 1:
            raise ValueError("n_sequences_per_class must be >= 1")


def generate_synthetic(spec: SynthSpec) -> Dataset:
    """Sample labeled sequences from class-specific left-to-right chains.

    Each (class, state) pair owns one regular and one privileged emission mean
    drawn from a standard normal. Latent paths start in state 0 and advance by
    one state with a fixed per-class probability. A contaminated privileged
    frame is ``mean + outlier_scale * noise`` with unit-variance noise.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    C, K = spec.n_classes, spec.n_states_true
    tmin, tmax = spec.seq_len_range
    mean_regular = rng.standard_normal((C, K, spec.dim_regular))
    mean_priv = rng.standard_normal((C, K, spec.dim_privileged))
    mean_len = 0.5 * (tmin + tmax)
    # chosen so the expected path visits every state within a typical length
    advance = rng.uniform(0.8, 1.2, size=C) * min(0.9, K / mean_len) if K > 1 else np.zeros(C)
    advance = np.clip(advance, 0.0, 0.95)

    width = len(str(C * spec.n_sequences_per_class - 1))
    samples = []
    for c in range(C):
        for n in range(spec.n_sequences_per_class):
            T = int(rng.integers(tmin, tmax + 1))
            states = np.zeros(T, dtype=int)
            moves = rng.random(T)
            for j in range(1, T):
                step = moves[j] < advance[c]
                states[j] = min(states[j - 1] + int(step), K - 1)
            frames = mean_regular[c, states] + spec.regular_noise_sigma * rng.standard_normal(
                (T, spec.dim_regular))
            priv = mean_priv[c, states] + spec.privileged_noise_sigma * rng.standard_normal(
                (T, spec.dim_privileged))
            hit = rng.random(T) < spec.outlier_rate
            blast = spec.outlier_scale * rng.standard_normal((T, spec.dim_privileged))
            priv[hit] = mean_priv[c, states[hit]] + blast[hit]
            sid = f"c{c}_{c * spec.n_sequences_per_class + n:0{width}d}"
            samples.append(SequenceSample(sid, c, frames, priv))
    cw = len(str(C - 1))
    vocab = [f"class{c:0{cw}d}" for c in range(C)]
    return Dataset(samples, vocab)
