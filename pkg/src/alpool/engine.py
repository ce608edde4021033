"""Iterative pool selection: committees, filters, scorers, and baselines.

Each named configuration wires a fixed committee (binary classifiers under
logistic/squared/hinge losses, optionally a per-target CRF), a filtering
rule over the signs of the binary scores, and a scoring rule where LOWER
means selected first. The CRF never votes in the filter; it only enters
through the confidence product used for scoring.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from . import crf as crf_mod
from .corpus import Corpus, Utterance
from .crf import CrfModel, crf_train, extract_token_features, sequence_confidence
from .features import (
    FeatureConfig,
    FeatureVector,
    extract_ngrams,
    stable_hash64,
    stack_vectors,
)
from .linear import LinearModel, TrainConfig, sigmoid_prob, train_binary

BINARY_LOSSES = {"lg": "logistic", "sq": "squared", "hg": "hinge"}

#: name -> (committee members, filter kind, scorer kind)
CONFIG_TABLE: dict[str, tuple[tuple[str, ...], str | None, str | None]] = {
    "Rand-Uniform": ((), None, None),
    "Rand-Domain": ((), None, None),
    "AL-Logistic": (("lg",), "majority", "raw"),
    "QBC-SA": (("lg", "sq", "hg"), "disagreement", "SA"),
    "QBC-AS": (("lg", "sq", "hg"), "disagreement", "AS"),
    "Majority-SA": (("lg", "sq", "hg"), "majority", "SA"),
    "Majority-AS": (("lg", "sq", "hg"), "majority", "AS"),
    "QBC-CRF": (("lg", "sq", "hg", "crf"), "disagreement", "CG"),
    "Majority-CRF": (("lg", "sq", "hg", "crf"), "majority", "CG"),
}

RANDOM_BASELINES = ("Rand-Uniform", "Rand-Domain")


class EngineError(ValueError):
    pass


class SelectionWarning(UserWarning):
    pass


def derive_seed(seed: int, tag: str) -> int:
    return stable_hash64(f"{seed}:{tag}") & 0x7FFFFFFF


@dataclass(frozen=True)
class CommitteeScores:
    """Raw committee outputs for one candidate; optional members are absent."""

    y_lg: float
    y_sq: float | None = None
    y_hg: float | None = None
    p_crf: float | None = None

    @property
    def p_lg(self) -> float:
        return sigmoid_prob(self.y_lg)

    def binary_scores(self) -> list[float]:
        return [y for y in (self.y_lg, self.y_sq, self.y_hg) if y is not None]


def sign(x: float) -> int:
    """sgn with sgn(0) := +1 so odd committees never tie at zero."""
    return 1 if x >= 0 else -1


def apply_filter(kind: str, scores: CommitteeScores) -> bool:
    total = sum(sign(y) for y in scores.binary_scores())
    if kind == "majority":
        return total > 0
    if kind == "disagreement":
        return total in (-1, 1)
    raise EngineError(f"unknown filter {kind!r}")


def apply_scorer(kind: str, scores: CommitteeScores) -> float:
    if kind == "SA":
        return sum(abs(y) for y in scores.binary_scores())
    if kind == "AS":
        return abs(sum(scores.binary_scores()))
    if kind == "raw":
        return scores.y_lg
    if kind == "CG":
        if scores.p_crf is None:
            raise EngineError("CG scorer requires a CRF confidence")
        return scores.p_crf * scores.p_lg
    raise EngineError(f"unknown scorer {kind!r}")


@dataclass(frozen=True)
class AlConfig:
    name: str
    iterations: int = 6
    batch_size: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.name not in CONFIG_TABLE:
            raise EngineError(f"unknown configuration {self.name!r}")
        if self.iterations < 1:
            raise EngineError("iterations must be >= 1")
        if self.batch_size < 1:
            raise EngineError("batch_size must be >= 1")

    @property
    def members(self) -> tuple[str, ...]:
        return CONFIG_TABLE[self.name][0]

    @property
    def filter_kind(self) -> str | None:
        return CONFIG_TABLE[self.name][1]

    @property
    def scorer_kind(self) -> str | None:
        return CONFIG_TABLE[self.name][2]

    @property
    def uses_crf(self) -> bool:
        return "crf" in self.members

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "iterations": self.iterations,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AlConfig":
        return cls(
            name=d["name"],
            iterations=int(d.get("iterations", 6)),
            batch_size=int(d.get("batch_size", 100)),
            seed=int(d.get("seed", 0)),
        )


@dataclass(frozen=True)
class PoolCandidate:
    """Unannotated view of a pool utterance; labels stay hidden by type."""

    id: str
    text: str
    tokens: tuple[str, ...]


def hide_labels(corpus: Corpus) -> list[PoolCandidate]:
    return [PoolCandidate(id=u.id, text=u.text, tokens=u.tokens) for u in corpus]


@dataclass
class CommitteeConfig:
    feature_config: FeatureConfig = field(default_factory=FeatureConfig)
    crf_feature_config: FeatureConfig = field(
        default_factory=crf_mod.default_crf_feature_config
    )
    binary_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(epochs=5, learning_rate=0.1, l2=1e-6)
    )
    crf_train: TrainConfig = field(
        default_factory=lambda: TrainConfig(epochs=4, learning_rate=0.1, l2=1e-6)
    )


@dataclass
class Committee:
    models: dict[str, LinearModel]
    crf: CrfModel | None
    config: CommitteeConfig


class FeatureCache:
    """Memoized per-utterance featurization keyed by utterance id."""

    def __init__(self, config: FeatureConfig):
        self.config = config
        self._cache: dict[str, FeatureVector] = {}

    def get(self, utt_id: str, tokens: Sequence[str]) -> FeatureVector:
        fv = self._cache.get(utt_id)
        if fv is None:
            fv = extract_ngrams(tokens, self.config)
            self._cache[utt_id] = fv
        return fv


class PoolFeatures:
    """Featurization of the full pool, computed once and reused across iterations."""

    def __init__(self, candidates: Sequence[PoolCandidate], config: CommitteeConfig):
        self.config = config
        self.row_of = {c.id: i for i, c in enumerate(candidates)}
        self.candidates = list(candidates)
        vectors = [extract_ngrams(c.tokens, config.feature_config) for c in candidates]
        self.matrix = stack_vectors(vectors, config.feature_config.dim)
        self._token_feats: dict[str, crf_mod.TokenFeatures] = {}

    def token_features(self, candidate: PoolCandidate) -> crf_mod.TokenFeatures:
        feats = self._token_feats.get(candidate.id)
        if feats is None:
            feats = extract_token_features(candidate.tokens, self.config.crf_feature_config)
            self._token_feats[candidate.id] = feats
        return feats


@dataclass
class SelectionState:
    """Algorithm state for one target: annotated set D, pool P, audit trail."""

    target: str
    annotated: Corpus
    pool: dict[str, PoolCandidate]
    iteration: int = 0
    audit: list[dict] = field(default_factory=list)

    def __post_init__(self):
        overlap = [cid for cid in self.pool if cid in self.annotated]
        if overlap:
            raise EngineError(f"D and P overlap on ids: {overlap[:5]}")

    @classmethod
    def initial(cls, target: str, annotated: Corpus, pool: Iterable[PoolCandidate]) -> "SelectionState":
        return cls(target=target, annotated=annotated, pool={c.id: c for c in pool})


def train_selection_models(
    annotated: Corpus,
    target: str,
    config: AlConfig,
    committee_config: CommitteeConfig | None = None,
    feature_cache: FeatureCache | None = None,
    iteration: int = 0,
) -> Committee:
    """Fit the configuration's committee on D for one target domain.

    Binary members separate the target domain from everything else; the CRF
    member (when present) is fit on the target's own BIO annotations only.
    """
    cc = committee_config or CommitteeConfig()
    cache = feature_cache or FeatureCache(cc.feature_config)
    positives = [u for u in annotated if u.domain == target]
    negatives = [u for u in annotated if u.domain != target]
    if not positives or not negatives:
        raise EngineError(
            f"need both positive and negative data for target {target!r} "
            f"(got {len(positives)} positive, {len(negatives)} negative)"
        )

    pos_fv = [cache.get(u.id, u.tokens) for u in positives]
    neg_fv = [cache.get(u.id, u.tokens) for u in negatives]

    models: dict[str, LinearModel] = {}
    for member in config.members:
        if member == "crf":
            continue
        loss = BINARY_LOSSES[member]
        train_cfg = TrainConfig(
            **{
                **cc.binary_train.to_dict(),
                "seed": derive_seed(config.seed, f"{target}:{iteration}:{member}"),
            }
        )
        models[member] = train_binary(
            pos_fv, neg_fv, loss, train_cfg, hash_bits=cc.feature_config.hash_bits
        )

    crf_model = None
    if config.uses_crf:
        sequences = [
            (extract_token_features(u.tokens, cc.crf_feature_config), list(u.bio_tags))
            for u in positives
            if len(u.tokens) > 0
        ]
        crf_cfg = TrainConfig(
            **{
                **cc.crf_train.to_dict(),
                "seed": derive_seed(config.seed, f"{target}:{iteration}:crf"),
            }
        )
        crf_model = crf_train(sequences, crf_cfg, feature_config=cc.crf_feature_config)

    return Committee(models=models, crf=crf_model, config=cc)


def score_candidate(committee: Committee, candidate: PoolCandidate) -> CommitteeScores:
    """Score one candidate; used by the service path and tests."""
    fv = extract_ngrams(candidate.tokens, committee.config.feature_config)
    y = {name: model.raw_score(fv) for name, model in committee.models.items()}
    p_crf = None
    if committee.crf is not None:
        if len(candidate.tokens) == 0:
            p_crf = 1.0
        else:
            feats = extract_token_features(candidate.tokens, committee.config.crf_feature_config)
            p_crf = sequence_confidence(committee.crf, feats)
    return CommitteeScores(
        y_lg=y["lg"], y_sq=y.get("sq"), y_hg=y.get("hg"), p_crf=p_crf
    )


def select_batch(
    state: SelectionState,
    committee: Committee,
    config: AlConfig,
    pool_features: PoolFeatures | None = None,
) -> list[str]:
    """Score the pool, filter, and pick the batch_size smallest (score, id).

    Appends one audit record per selected utterance to the state.
    """
    if not state.pool:
        raise EngineError("pool is empty")
    candidates = list(state.pool.values())
    if pool_features is None:
        pool_features = PoolFeatures(candidates, committee.config)

    rows = np.array([pool_features.row_of[c.id] for c in candidates], dtype=np.int64)
    matrix = pool_features.matrix[rows]
    raw: dict[str, np.ndarray] = {
        name: model.raw_scores(matrix) for name, model in committee.models.items()
    }

    signs = np.zeros(len(candidates), dtype=np.int64)
    for scores in raw.values():
        signs += np.where(scores >= 0, 1, -1)
    if config.filter_kind == "majority":
        passed = signs > 0
    elif config.filter_kind == "disagreement":
        passed = np.abs(signs) == 1
    else:
        raise EngineError(f"configuration {config.name} does not select by committee")

    pass_idx = np.flatnonzero(passed)
    if pass_idx.size == 0:
        warnings.warn(
            f"no pool candidate passed the {config.filter_kind} filter for "
            f"target {state.target!r} at iteration {state.iteration}",
            SelectionWarning,
        )
        return []

    p_crf_by_id: dict[str, float] = {}
    if config.scorer_kind == "CG":
        from .crf import TokenFeatureMatrix, batch_decode_with_confidence

        p_lg = expit(raw["lg"][pass_idx])
        feats_list = [pool_features.token_features(candidates[i]) for i in pass_idx]
        tfm = TokenFeatureMatrix(feats_list, committee.config.crf_feature_config.dim)
        _, p_crf = batch_decode_with_confidence(committee.crf, tfm)
        for i, value in zip(pass_idx, p_crf):
            p_crf_by_id[candidates[i].id] = float(value)
        scores = p_crf * p_lg
    elif config.scorer_kind == "SA":
        scores = sum(np.abs(raw[m][pass_idx]) for m in raw)
    elif config.scorer_kind == "AS":
        scores = np.abs(sum(raw[m][pass_idx] for m in raw))
    elif config.scorer_kind == "raw":
        scores = raw["lg"][pass_idx]
    else:
        raise EngineError(f"unknown scorer {config.scorer_kind!r}")

    local_row = {candidates[i].id: i for i in pass_idx}
    ranked = sorted(
        zip(scores.tolist(), (candidates[i].id for i in pass_idx)),
        key=lambda si: (si[0], si[1]),
    )[: config.batch_size]

    batch: list[str] = []
    for rank, (score, cid) in enumerate(ranked):
        i = local_row[cid]
        record = {
            "id": cid,
            "iteration": state.iteration,
            "target": state.target,
            "y_lg": float(raw["lg"][i]),
            "filter_passed": True,
            "rank": rank,
        }
        if "sq" in raw:
            record["y_sq"] = float(raw["sq"][i])
        if "hg" in raw:
            record["y_hg"] = float(raw["hg"][i])
        if cid in p_crf_by_id:
            record["p_crf"] = p_crf_by_id[cid]
        record["score"] = float(score)
        state.audit.append(record)
        batch.append(cid)
    return batch


def advance(
    state: SelectionState, batch: Sequence[str], annotations: dict[str, Utterance]
) -> SelectionState:
    """Fold an annotated batch into D, drop it from P, bump the iteration."""
    missing = [cid for cid in batch if cid not in annotations]
    if missing:
        raise EngineError(f"missing annotations for ids: {missing}")
    gone = [cid for cid in batch if cid not in state.pool]
    if gone:
        raise EngineError(f"ids no longer in pool: {gone}")
    merged = Corpus(list(state.annotated) + [annotations[cid] for cid in batch])
    pool = {cid: c for cid, c in state.pool.items() if cid not in set(batch)}
    return SelectionState(
        target=state.target,
        annotated=merged,
        pool=pool,
        iteration=state.iteration + 1,
        audit=state.audit,
    )


def random_uniform(
    pool: Sequence[PoolCandidate], n: int, seed: int
) -> list[str]:
    if n > len(pool):
        raise EngineError(f"requested {n} from a pool of {len(pool)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pool))[:n]
    return [pool[i].id for i in order]


def random_domain(
    pool: Sequence[PoolCandidate], target: str, n: int, seed: int, nlu
) -> list[str]:
    """Seeded uniform sample among candidates whose top NLU domain is the target."""
    from .nlu import interpret

    matching = [c for c in pool if interpret(nlu, c.tokens)[0].domain == target]
    if not matching:
        warnings.warn(
            f"no pool candidate predicted in target {target!r}", SelectionWarning
        )
        return []
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(matching))[: min(n, len(matching))]
    return [matching[i].id for i in order]


def dedupe_multi_target(batches: Sequence[tuple[str, Sequence[str]]]) -> dict[str, str]:
    """Union per-target batches by id; first target wins provenance."""
    merged: dict[str, str] = {}
    for target, ids in batches:
        for cid in ids:
            merged.setdefault(cid, target)
    return merged


def write_audit(records: Iterable[dict], path: str | Path) -> None:
    with Path(path).open("a", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + "\n")
