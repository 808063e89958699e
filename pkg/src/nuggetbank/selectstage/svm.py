"""Linear soft-margin SVM over standardized quality vectors.

Training solves the L1-loss (hinge) dual by coordinate descent with a
seeded per-epoch permutation, so a model is a pure function of its inputs,
seed and hyperparameters. The bias is learned as the weight of a constant
feature (and is therefore regularized along with the rest).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import kernels
from ..io import atomic_write_text
from ..model import CRITERION_NAMES, ContractError, QualityVector, fingerprint

N_FEATURES = len(CRITERION_NAMES)


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class SvmHyperparams:
    C: float = 1.0
    max_epochs: int = 100_000
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.C <= 0 or self.max_epochs < 1 or self.tol < 0:
            raise ValueError("invalid SVM hyperparameters")

    def to_record(self) -> dict:
        return {"C": self.C, "max_epochs": self.max_epochs, "tol": self.tol, "seed": self.seed}


@dataclass(frozen=True)
class SvmModel:
    weights: tuple[float, ...]
    bias: float
    feature_means: tuple[float, ...]
    feature_scales: tuple[float, ...]
    training_fingerprint: str
    epochs_run: int = 0

    def __post_init__(self):
        for name in ("weights", "feature_means", "feature_scales"):
            if len(getattr(self, name)) != N_FEATURES:
                raise ContractError(f"{name} must have {N_FEATURES} entries")
        if any(s <= 0 for s in self.feature_scales):
            raise ContractError("feature scales must be strictly positive")

    def standardize(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return (X - np.asarray(self.feature_means)) / np.asarray(self.feature_scales)

    def decision_function(self, vectors: Sequence[QualityVector] | np.ndarray) -> np.ndarray:
        X = _matrix(vectors) if not isinstance(vectors, np.ndarray) else vectors
        return self.standardize(X) @ np.asarray(self.weights) + self.bias

    def predict(self, vectors) -> np.ndarray:
        return np.where(self.decision_function(vectors) >= 0.0, 1, -1)

    def scaled(self, c: float) -> "SvmModel":
        return SvmModel(
            tuple(c * w for w in self.weights), c * self.bias, self.feature_means, self.feature_scales,
            self.training_fingerprint, self.epochs_run,
        )

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["feature_names"] = list(CRITERION_NAMES)
        return rec

    @classmethod
    def from_record(cls, rec) -> "SvmModel":
        names = rec.get("feature_names")
        if names is not None and list(names) != list(CRITERION_NAMES):
            raise ContractError("model feature layout does not match the criteria order")
        return cls(
            weights=tuple(map(float, rec["weights"])),
            bias=float(rec["bias"]),
            feature_means=tuple(map(float, rec["feature_means"])),
            feature_scales=tuple(map(float, rec["feature_scales"])),
            training_fingerprint=str(rec["training_fingerprint"]),
            epochs_run=int(rec.get("epochs_run", 0)),
        )

    def save(self, path: str | Path) -> None:
        atomic_write_text(path, json.dumps(self.to_record(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "SvmModel":
        return cls.from_record(json.loads(Path(path).read_text(encoding="utf-8")))


def _matrix(vectors: Sequence[QualityVector]) -> np.ndarray:
    return np.array([v.as_list() for v in vectors], dtype=np.float64).reshape(-1, N_FEATURES)


def fit_standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales = np.where(scales > 0, scales, 1.0)
    return means, scales


def train_from_arrays(X: np.ndarray, y: np.ndarray, hp: SvmHyperparams = SvmHyperparams()) -> SvmModel:
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != N_FEATURES or len(y) != len(X):
        raise ContractError(f"expected an (n, {N_FEATURES}) matrix with one label per row")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise TrainingError("need at least one positive and one negative example")
    if np.all(X == X[0]):
        raise TrainingError("all feature vectors are identical; nothing to separate")
    means, scales = fit_standardizer(X)
    Z = (X - means) / scales
    Za = np.ascontiguousarray(np.hstack([Z, np.ones((len(Z), 1))]))
    w, _alpha, epochs = kernels.svm_dual_cd(Za, y, float(hp.C), int(hp.max_epochs), float(hp.tol), int(hp.seed))
    fp = fingerprint({"X": X.tolist(), "y": y.tolist(), "hp": asdict(hp)})
    return SvmModel(
        weights=tuple(float(v) for v in w[:-1]),
        bias=float(w[-1]),
        feature_means=tuple(float(v) for v in means),
        feature_scales=tuple(float(v) for v in scales),
        training_fingerprint=fp,
        epochs_run=int(epochs),
    )


def train_svm(
    positives: Sequence[QualityVector],
    negatives: Sequence[QualityVector],
    hyperparams: SvmHyperparams = SvmHyperparams(),
) -> SvmModel:
    if not positives or not negatives:
        raise TrainingError("need at least one positive and one negative example")
    X = np.vstack([_matrix(positives), _matrix(negatives)])
    y = np.concatenate([np.ones(len(positives)), -np.ones(len(negatives))])
    return train_from_arrays(X, y, hyperparams)


def holdout_accuracy(model: SvmModel, positives: Sequence[QualityVector], negatives: Sequence[QualityVector]) -> float:
    pred_pos = model.predict(positives) if positives else np.array([])
    pred_neg = model.predict(negatives) if negatives else np.array([])
    correct = int(np.sum(pred_pos == 1)) + int(np.sum(pred_neg == -1))
    total = len(positives) + len(negatives)
    return correct / total if total else float("nan")
