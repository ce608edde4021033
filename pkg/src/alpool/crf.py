"""Linear-chain CRF for BIO slot tagging.

Emissions come from hashed token-local features (current token, +/-1 window,
boundary indicators); transitions are a dense label-by-label matrix. All
dynamic programming runs in log space. An optional hard constraint forbids
transitions into I-X from anything but B-X/I-X (and starting at I-X), which
guarantees BIO-decodable output.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import FeatureConfig, FeatureVector, hash_token

NEG_INF = -1.0e30

FORMAT_VERSION = 1

_MAX_EPOCH_RETRIES = 8


class CrfError(ValueError):
    pass


@dataclass(frozen=True)
class TokenFeatures:
    """One sparse feature vector per token position."""

    vectors: tuple[FeatureVector, ...]

    def __len__(self) -> int:
        return len(self.vectors)


def default_crf_feature_config() -> FeatureConfig:
    # Token-local features only; unigram orders, smaller table than the
    # utterance-level n-gram space.
    return FeatureConfig(ngram_orders=(1,), hash_bits=16, lowercase=True)


def extract_token_features(
    tokens: Sequence[str], config: FeatureConfig
) -> TokenFeatures:
    toks = [t.lower() for t in tokens] if config.lowercase else list(tokens)
    bits = config.hash_bits
    vectors = []
    last = len(toks) - 1
    for t, tok in enumerate(toks):
        counts: dict[int, float] = {}

        def add(key: str) -> None:
            idx = hash_token(key, bits)
            counts[idx] = counts.get(idx, 0.0) + 1.0

        add(f"w0={tok}")
        add(f"w-1={toks[t - 1]}" if t > 0 else "__first__")
        add(f"w+1={toks[t + 1]}" if t < last else "__last__")
        vectors.append(FeatureVector.from_counts(counts))
    return TokenFeatures(vectors=tuple(vectors))


def _bio_penalties(labels: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """(start penalty vector, transition penalty matrix) enforcing BIO order."""
    n = len(labels)
    start = np.zeros(n)
    trans = np.zeros((n, n))
    for j, dst in enumerate(labels):
        if not dst.startswith("I-"):
            continue
        slot = dst[2:]
        start[j] = NEG_INF
        for i, src in enumerate(labels):
            if src not in (f"B-{slot}", f"I-{slot}"):
                trans[i, j] = NEG_INF
    return start, trans


@dataclass
class CrfModel:
    labels: tuple[str, ...]
    emit: np.ndarray  # (2^hash_bits, n_labels)
    trans: np.ndarray  # (n_labels, n_labels)
    feature_config: FeatureConfig
    constrain_bio: bool = True

    def __post_init__(self):
        if "O" not in self.labels:
            raise CrfError('label set must contain "O"')
        self._start_pen, self._trans_pen = (
            _bio_penalties(self.labels)
            if self.constrain_bio
            else (np.zeros(len(self.labels)), np.zeros((len(self.labels),) * 2))
        )

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    def effective_trans(self) -> np.ndarray:
        return self.trans + self._trans_pen

    def start_scores(self) -> np.ndarray:
        return self._start_pen

    def emissions(self, feats: TokenFeatures) -> np.ndarray:
        """(T, n_labels) emission score matrix."""
        out = np.zeros((len(feats), self.n_labels))
        for t, fv in enumerate(feats.vectors):
            if fv.nnz:
                out[t] = fv.values @ self.emit[fv.indices, :]
        return out

    def to_dict(self) -> dict:
        per_label = []
        for j in range(self.n_labels):
            nz = np.flatnonzero(self.emit[:, j])
            per_label.append({"indices": nz.tolist(), "values": self.emit[nz, j].tolist()})
        return {
            "format_version": FORMAT_VERSION,
            "kind": "crf",
            "labels": list(self.labels),
            "feature_config": self.feature_config.to_dict(),
            "constrain_bio": self.constrain_bio,
            "transitions": self.trans.tolist(),
            "emissions": per_label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrfModel":
        if d.get("kind") != "crf":
            raise CrfError(f"expected crf model blob, got {d.get('kind')!r}")
        config = FeatureConfig.from_dict(d["feature_config"])
        labels = tuple(d["labels"])
        emit = np.zeros((config.dim, len(labels)))
        for j, blob in enumerate(d["emissions"]):
            emit[np.asarray(blob["indices"], dtype=np.int64), j] = np.asarray(
                blob["values"], dtype=np.float64
            )
        return cls(
            labels=labels,
            emit=emit,
            trans=np.asarray(d["transitions"], dtype=np.float64),
            feature_config=config,
            constrain_bio=bool(d["constrain_bio"]),
        )


def save_crf(model: CrfModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()), encoding="utf-8")


def load_crf(path: str | Path) -> CrfModel:
    return CrfModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _logsumexp(a: np.ndarray, axis: int | None = None):
    m = np.max(a, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return out.squeeze(axis) if axis is not None else float(out.reshape(()))


def _check_length(feats: TokenFeatures) -> None:
    if len(feats) < 1:
        raise CrfError("sequence length must be >= 1")


def log_partition(model: CrfModel, feats: TokenFeatures) -> float:
    """log sum over all label paths of exp(path score), forward recursion."""
    _check_length(feats)
    emissions = model.emissions(feats)
    trans = model.effective_trans()
    alpha = emissions[0] + model.start_scores()
    for t in range(1, len(feats)):
        alpha = _logsumexp(alpha[:, None] + trans, axis=0) + emissions[t]
    return float(_logsumexp(alpha))


def path_score(model: CrfModel, feats: TokenFeatures, labels: Sequence[str]) -> float:
    _check_length(feats)
    if len(labels) != len(feats):
        raise CrfError("label sequence length mismatch")
    idx = [model.labels.index(y) for y in labels]
    emissions = model.emissions(feats)
    trans = model.effective_trans()
    score = float(model.start_scores()[idx[0]]) + float(emissions[0, idx[0]])
    for t in range(1, len(feats)):
        score += float(trans[idx[t - 1], idx[t]]) + float(emissions[t, idx[t]])
    return score


def viterbi(model: CrfModel, feats: TokenFeatures) -> tuple[list[str], float]:
    """Best label path; ties resolved toward the lowest label index."""
    _check_length(feats)
    emissions = model.emissions(feats)
    trans = model.effective_trans()
    T = len(feats)
    delta = emissions[0] + model.start_scores()
    back = np.zeros((T, model.n_labels), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + trans
        back[t] = np.argmax(cand, axis=0)  # first max = lowest label index
        delta = cand[back[t], np.arange(model.n_labels)] + emissions[t]
    best_last = int(np.argmax(delta))
    best_score = float(delta[best_last])
    path = [best_last]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return [model.labels[i] for i in path], best_score


def decode_with_confidence(
    model: CrfModel, feats: TokenFeatures
) -> tuple[list[str], float]:
    """(Viterbi path, normalized path probability) with one emission pass."""
    _check_length(feats)
    emissions = model.emissions(feats)
    trans = model.effective_trans()
    start = model.start_scores()
    T = len(feats)

    delta = emissions[0] + start
    alpha = emissions[0] + start
    back = np.zeros((T, model.n_labels), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + trans
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(model.n_labels)] + emissions[t]
        alpha = _logsumexp(alpha[:, None] + trans, axis=0) + emissions[t]
    best_last = int(np.argmax(delta))
    best_score = float(delta[best_last])
    log_z = float(_logsumexp(alpha))

    path = [best_last]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    log_p = min(0.0, best_score - log_z)
    return [model.labels[i] for i in path], float(math.exp(max(log_p, -700.0)))


def sequence_confidence(model: CrfModel, feats: TokenFeatures) -> float:
    """Normalized probability of the Viterbi path, in (0, 1]."""
    return decode_with_confidence(model, feats)[1]


class TokenFeatureMatrix:
    """Row-stacked position features for many sequences, for batched decoding."""

    def __init__(self, feats_list: Sequence[TokenFeatures], dim: int):
        from .features import stack_vectors

        self.lengths = np.array([len(f) for f in feats_list], dtype=np.int64)
        self.offsets = np.concatenate([[0], np.cumsum(self.lengths)])
        vectors = [fv for feats in feats_list for fv in feats.vectors]
        self.matrix = stack_vectors(vectors, dim)

    def __len__(self) -> int:
        return len(self.lengths)


def batch_decode_with_confidence(
    model: CrfModel, tfm: TokenFeatureMatrix
) -> tuple[list[list[str]], np.ndarray]:
    """Vectorized decode_with_confidence over many sequences.

    Sequences of length zero get an empty path with confidence 1.
    """
    n_seqs = len(tfm)
    paths: list[list[str] | None] = [None] * n_seqs
    confidences = np.ones(n_seqs, dtype=np.float64)
    if n_seqs == 0:
        return [], confidences

    emissions_flat = np.asarray(tfm.matrix @ model.emit)
    trans = model.effective_trans()
    start = model.start_scores()
    n_labels = model.n_labels

    by_length: dict[int, list[int]] = {}
    for i, length in enumerate(tfm.lengths.tolist()):
        by_length.setdefault(length, []).append(i)

    for length, members in by_length.items():
        if length == 0:
            for i in members:
                paths[i] = []
            continue
        ns = np.array(members, dtype=np.int64)
        pos = (tfm.offsets[ns][:, None] + np.arange(length)[None, :]).ravel()
        emissions = emissions_flat[pos].reshape(len(ns), length, n_labels)

        delta = emissions[:, 0, :] + start
        alpha = emissions[:, 0, :] + start
        back = np.zeros((len(ns), length, n_labels), dtype=np.int64)
        rows = np.arange(len(ns))
        for t in range(1, length):
            cand = delta[:, :, None] + trans[None, :, :]
            back[:, t, :] = np.argmax(cand, axis=1)
            delta = cand[rows[:, None], back[:, t, :], np.arange(n_labels)[None, :]]
            delta = delta + emissions[:, t, :]
            stacked = alpha[:, :, None] + trans[None, :, :]
            m = stacked.max(axis=1)
            alpha = m + np.log(np.exp(stacked - m[:, None, :]).sum(axis=1))
            alpha = alpha + emissions[:, t, :]

        best_last = np.argmax(delta, axis=1)
        best = delta[rows, best_last]
        m = alpha.max(axis=1)
        log_z = m + np.log(np.exp(alpha - m[:, None]).sum(axis=1))

        idx_paths = np.zeros((len(ns), length), dtype=np.int64)
        idx_paths[:, -1] = best_last
        for t in range(length - 1, 0, -1):
            idx_paths[:, t - 1] = back[rows, t, idx_paths[:, t]]

        log_p = np.minimum(0.0, best - log_z)
        conf = np.exp(np.maximum(log_p, -700.0))
        for row, i in enumerate(members):
            paths[i] = [model.labels[j] for j in idx_paths[row]]
            confidences[i] = conf[row]

    return paths, confidences  # type: ignore[return-value]


def _marginals(
    emissions: np.ndarray, trans: np.ndarray, start: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float]:
    T, n = emissions.shape
    alpha = np.zeros((T, n))
    alpha[0] = emissions[0] + start
    for t in range(1, T):
        alpha[t] = _logsumexp(alpha[t - 1][:, None] + trans, axis=0) + emissions[t]
    log_z = float(_logsumexp(alpha[-1]))

    beta = np.zeros((T, n))
    for t in range(T - 2, -1, -1):
        beta[t] = _logsumexp(trans + (emissions[t + 1] + beta[t + 1])[None, :], axis=1)

    node = np.exp(alpha + beta - log_z)
    pair = np.zeros((max(T - 1, 0), n, n))
    for t in range(T - 1):
        log_pair = (
            alpha[t][:, None] + trans + (emissions[t + 1] + beta[t + 1])[None, :] - log_z
        )
        pair[t] = np.exp(log_pair)
    return node, pair, log_z


def forward_backward(
    model: CrfModel, feats: TokenFeatures
) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-position and pairwise marginals plus the log partition."""
    _check_length(feats)
    return _marginals(model.emissions(feats), model.effective_trans(), model.start_scores())


def sequence_nll(model: CrfModel, feats: TokenFeatures, labels: Sequence[str]) -> float:
    return log_partition(model, feats) - path_score(model, feats, labels)


def nll_gradient(
    model: CrfModel, feats: TokenFeatures, labels: Sequence[str]
) -> tuple[float, np.ndarray, np.ndarray]:
    """(nll, d nll/d emit, d nll/d trans); dense, intended for small tables."""
    node, pair, log_z = forward_backward(model, feats)
    idx = [model.labels.index(y) for y in labels]
    d_emit = np.zeros_like(model.emit)
    for t, fv in enumerate(feats.vectors):
        row = node[t].copy()
        row[idx[t]] -= 1.0
        if fv.nnz:
            d_emit[fv.indices, :] += np.outer(fv.values, row)
    d_trans = pair.sum(axis=0)
    for t in range(1, len(feats)):
        d_trans[idx[t - 1], idx[t]] -= 1.0
    nll = log_z - path_score(model, feats, labels)
    return nll, d_emit, d_trans


def crf_train(
    sequences: Sequence[tuple[TokenFeatures, Sequence[str]]],
    config,
    feature_config: FeatureConfig | None = None,
    labels: Sequence[str] | None = None,
    constrain_bio: bool = True,
) -> CrfModel:
    """SGD on the L2-regularized negative log-likelihood."""
    config.validate()
    if not sequences:
        raise CrfError("no training sequences")
    if feature_config is None:
        feature_config = default_crf_feature_config()

    if labels is None:
        label_set = sorted({y for _, gold in sequences for y in gold} | {"O"})
    else:
        label_set = list(labels)
        if "O" not in label_set:
            label_set.append("O")
    label_index = {y: j for j, y in enumerate(label_set)}
    for _, gold in sequences:
        for y in gold:
            if y not in label_index:
                raise CrfError(f"label {y!r} outside label_set")

    model = CrfModel(
        labels=tuple(label_set),
        emit=np.zeros((feature_config.dim, len(label_set))),
        trans=np.zeros((len(label_set), len(label_set))),
        feature_config=feature_config,
        constrain_bio=constrain_bio,
    )

    rng = np.random.default_rng(config.seed)
    start = model.start_scores()
    gold_idx = [
        np.array([label_index[y] for y in gold], dtype=np.int64) for _, gold in sequences
    ]
    lr = config.learning_rate
    prev_avg = math.inf
    for _ in range(config.epochs):
        order = rng.permutation(len(sequences))
        for _attempt in range(_MAX_EPOCH_RETRIES):
            emit0, trans0 = model.emit.copy(), model.trans.copy()
            total = 0.0
            for j in order:
                feats, _ = sequences[j]
                idx = gold_idx[j]
                if len(feats) == 0:
                    continue
                emissions = model.emissions(feats)
                node, pair, log_z = _marginals(emissions, model.effective_trans(), start)
                gold_score = float(start[idx[0]]) + float(emissions[np.arange(len(idx)), idx].sum())
                if len(idx) > 1:
                    gold_score += float(model.effective_trans()[idx[:-1], idx[1:]].sum())
                total += log_z - gold_score
                if config.l2 > 0:
                    model.trans *= 1.0 - lr * config.l2
                for t, fv in enumerate(feats.vectors):
                    row = node[t].copy()
                    row[idx[t]] -= 1.0
                    if fv.nnz:
                        if config.l2 > 0:
                            model.emit[fv.indices, :] *= 1.0 - lr * config.l2
                        model.emit[fv.indices, :] -= lr * np.outer(fv.values, row)
                d_trans = pair.sum(axis=0)
                np.subtract.at(d_trans, (idx[:-1], idx[1:]), 1.0)
                model.trans -= lr * d_trans
            avg = total / len(sequences)
            if avg <= prev_avg + 1e-12:
                prev_avg = avg
                break
            model.emit, model.trans = emit0, trans0
            lr *= 0.5
        else:
            break

    if not (np.all(np.isfinite(model.emit)) and np.all(np.isfinite(model.trans))):
        raise CrfError("training diverged to non-finite weights")
    return model
