"""Binary linear classifiers (logistic/squared/hinge) and a MaxEnt classifier.

Training is plain seeded SGD over hashed sparse features. If an epoch's
average training loss rises, the epoch is replayed with a halved learning
rate, so the accepted per-epoch averages are non-increasing and training
stays deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureVector

LOSS_KINDS = ("logistic", "squared", "hinge")

FORMAT_VERSION = 1

_MAX_EPOCH_RETRIES = 8


class ModelError(ValueError):
    pass


def sigmoid_prob(score: float) -> float:
    """Stable logistic sigmoid."""
    if score >= 0:
        return 1.0 / (1.0 + math.exp(-score))
    e = math.exp(score)
    return e / (1.0 + e)


def loss_value(loss_kind: str, score: float, label: int) -> float:
    margin = label * score
    if loss_kind == "logistic":
        # log(1 + exp(-margin)) without overflow
        if margin > 0:
            return math.log1p(math.exp(-margin))
        return -margin + math.log1p(math.exp(margin))
    if loss_kind == "hinge":
        return max(0.0, 1.0 - margin)
    if loss_kind == "squared":
        return 0.5 * (score - label) ** 2
    raise ModelError(f"unknown loss {loss_kind!r}")


def loss_gradient(loss_kind: str, score: float, label: int) -> float:
    """d(loss)/d(score); the per-example weight gradient is this times x."""
    if label not in (-1, 1):
        raise ModelError(f"label must be -1 or +1, got {label}")
    if loss_kind == "logistic":
        return sigmoid_prob(score) - (label + 1) / 2
    if loss_kind == "hinge":
        return -label if label * score < 1 else 0.0
    if loss_kind == "squared":
        return score - label
    raise ModelError(f"unknown loss {loss_kind!r}")


@dataclass
class TrainConfig:
    epochs: int = 5
    learning_rate: float = 0.1
    l2: float = 1e-6
    seed: int = 0
    neg_pos_ratio_cap: float | None = 10.0

    def validate(self) -> None:
        if self.epochs < 1:
            raise ModelError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be positive")
        if self.l2 < 0:
            raise ModelError("l2 must be non-negative")
        if self.neg_pos_ratio_cap is not None and self.neg_pos_ratio_cap <= 0:
            raise ModelError("neg_pos_ratio_cap must be positive")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "l2": self.l2,
            "seed": self.seed,
            "neg_pos_ratio_cap": self.neg_pos_ratio_cap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        cfg = cls(**{k: d[k] for k in cls().__dict__ if k in d})
        cfg.validate()
        return cfg


@dataclass
class LinearModel:
    weights: np.ndarray  # dense, length 2^hash_bits
    bias: float
    loss_kind: str
    hash_bits: int

    def raw_score(self, fv: FeatureVector) -> float:
        return fv.dot(self.weights) + self.bias

    def raw_scores(self, matrix) -> np.ndarray:
        """Scores for a CSR matrix of stacked feature vectors."""
        return np.asarray(matrix @ self.weights).ravel() + self.bias

    def to_dict(self) -> dict:
        nz = np.flatnonzero(self.weights)
        return {
            "format_version": FORMAT_VERSION,
            "kind": "linear",
            "loss_kind": self.loss_kind,
            "hash_bits": self.hash_bits,
            "bias": self.bias,
            "indices": nz.tolist(),
            "values": self.weights[nz].tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        if d.get("kind") != "linear":
            raise ModelError(f"expected linear model blob, got {d.get('kind')!r}")
        weights = np.zeros(1 << int(d["hash_bits"]), dtype=np.float64)
        weights[np.asarray(d["indices"], dtype=np.int64)] = np.asarray(
            d["values"], dtype=np.float64
        )
        return cls(
            weights=weights,
            bias=float(d["bias"]),
            loss_kind=d["loss_kind"],
            hash_bits=int(d["hash_bits"]),
        )


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()), encoding="utf-8")


def load_linear(path: str | Path) -> LinearModel:
    return LinearModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def downsample_negatives(
    negatives: Sequence, cap: float, n_positives: int, rng: np.random.Generator
) -> list:
    """Seeded subsample of negatives to at most cap * n_positives items."""
    limit = int(cap * n_positives)
    if len(negatives) <= limit:
        return list(negatives)
    keep = rng.choice(len(negatives), size=limit, replace=False)
    keep.sort()
    return [negatives[i] for i in keep]


def train_binary(
    positives: Sequence[FeatureVector],
    negatives: Sequence[FeatureVector],
    loss_kind: str,
    config: TrainConfig,
    hash_bits: int = 18,
) -> LinearModel:
    """SGD with per-epoch seeded shuffling and L2 regularization."""
    config.validate()
    if loss_kind not in LOSS_KINDS:
        raise ModelError(f"unknown loss {loss_kind!r}")
    if not positives or not negatives:
        raise ModelError("both classes must be non-empty")

    rng = np.random.default_rng(config.seed)
    negatives = list(negatives)
    if config.neg_pos_ratio_cap is not None:
        negatives = downsample_negatives(
            negatives, config.neg_pos_ratio_cap, len(positives), rng
        )

    examples = [(fv, 1) for fv in positives] + [(fv, -1) for fv in negatives]
    dim = 1 << hash_bits

    # Weights are kept as scale * v so per-example L2 decay stays O(nnz).
    v = np.zeros(dim, dtype=np.float64)
    scale = 1.0
    bias = 0.0
    lr = config.learning_rate
    prev_avg = math.inf

    for _ in range(config.epochs):
        order = rng.permutation(len(examples))
        for _attempt in range(_MAX_EPOCH_RETRIES):
            v0, scale0, bias0 = v.copy(), scale, bias
            total = 0.0
            for j in order:
                fv, label = examples[j]
                score = scale * fv.dot(v) + bias
                total += loss_value(loss_kind, score, label)
                if config.l2 > 0:
                    scale *= 1.0 - lr * config.l2
                g = loss_gradient(loss_kind, score, label)
                if g != 0.0 and fv.nnz:
                    v[fv.indices] -= (lr * g / scale) * fv.values
                    bias -= lr * g
                elif g != 0.0:
                    bias -= lr * g
            avg = total / len(examples)
            if avg <= prev_avg + 1e-12:
                prev_avg = avg
                break
            # Replay the same epoch (same order) at a smaller step.
            v, scale, bias = v0, scale0, bias0
            lr *= 0.5
        else:
            break

    weights = scale * v
    if not np.all(np.isfinite(weights)) or not math.isfinite(bias):
        raise ModelError("training diverged to non-finite weights")
    return LinearModel(weights=weights, bias=bias, loss_kind=loss_kind, hash_bits=hash_bits)


# --------------------------------------------------------------------------
# MaxEnt intent classifier
# --------------------------------------------------------------------------


@dataclass
class MaxEntModel:
    class_labels: tuple[str, ...]
    weights: np.ndarray  # (n_classes, 2^hash_bits)
    biases: np.ndarray  # (n_classes,)
    hash_bits: int

    def class_scores(self, fv: FeatureVector) -> np.ndarray:
        if fv.nnz == 0:
            return self.biases.copy()
        return self.weights[:, fv.indices] @ fv.values + self.biases

    def to_dict(self) -> dict:
        per_class = []
        for c in range(len(self.class_labels)):
            nz = np.flatnonzero(self.weights[c])
            per_class.append(
                {"indices": nz.tolist(), "values": self.weights[c, nz].tolist()}
            )
        return {
            "format_version": FORMAT_VERSION,
            "kind": "maxent",
            "class_labels": list(self.class_labels),
            "hash_bits": self.hash_bits,
            "biases": self.biases.tolist(),
            "classes": per_class,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaxEntModel":
        if d.get("kind") != "maxent":
            raise ModelError(f"expected maxent model blob, got {d.get('kind')!r}")
        labels = tuple(d["class_labels"])
        weights = np.zeros((len(labels), 1 << int(d["hash_bits"])), dtype=np.float64)
        for c, blob in enumerate(d["classes"]):
            weights[c, np.asarray(blob["indices"], dtype=np.int64)] = np.asarray(
                blob["values"], dtype=np.float64
            )
        return cls(
            class_labels=labels,
            weights=weights,
            biases=np.asarray(d["biases"], dtype=np.float64),
            hash_bits=int(d["hash_bits"]),
        )


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max()
    e = np.exp(z)
    return e / e.sum()


def predict_maxent(model: MaxEntModel, fv: FeatureVector) -> dict[str, float]:
    probs = softmax(model.class_scores(fv))
    return dict(zip(model.class_labels, probs.tolist()))


def train_maxent(
    examples: Sequence[tuple[FeatureVector, str]],
    config: TrainConfig,
    hash_bits: int = 18,
    class_labels: Sequence[str] | None = None,
) -> MaxEntModel:
    """Multinomial logistic regression by seeded SGD on cross-entropy."""
    config.validate()
    if class_labels is None:
        class_labels = sorted({label for _, label in examples})
    labels = tuple(class_labels)
    if len(labels) < 2:
        raise ModelError("need at least 2 intent classes")
    label_index = {label: i for i, label in enumerate(labels)}
    for _, label in examples:
        if label not in label_index:
            raise ModelError(f"example label {label!r} not in class set")

    rng = np.random.default_rng(config.seed)
    dim = 1 << hash_bits
    v = np.zeros((len(labels), dim), dtype=np.float64)
    scale = 1.0
    biases = np.zeros(len(labels), dtype=np.float64)
    lr = config.learning_rate
    prev_avg = math.inf

    for _ in range(config.epochs):
        order = rng.permutation(len(examples))
        for _attempt in range(_MAX_EPOCH_RETRIES):
            v0, scale0, b0 = v.copy(), scale, biases.copy()
            total = 0.0
            for j in order:
                fv, label = examples[j]
                gold = label_index[label]
                if fv.nnz:
                    scores = scale * (v[:, fv.indices] @ fv.values) + biases
                else:
                    scores = biases.copy()
                probs = softmax(scores)
                total += -math.log(max(probs[gold], 1e-300))
                if config.l2 > 0:
                    scale *= 1.0 - lr * config.l2
                grad = probs.copy()
                grad[gold] -= 1.0
                if fv.nnz:
                    v[:, fv.indices] -= (lr / scale) * np.outer(grad, fv.values)
                biases -= lr * grad
            avg = total / len(examples)
            if avg <= prev_avg + 1e-12:
                prev_avg = avg
                break
            v, scale, biases = v0, scale0, b0
            lr *= 0.5
        else:
            break

    weights = scale * v
    if not np.all(np.isfinite(weights)):
        raise ModelError("training diverged to non-finite weights")
    return MaxEntModel(
        class_labels=labels, weights=weights, biases=biases, hash_bits=hash_bits
    )
