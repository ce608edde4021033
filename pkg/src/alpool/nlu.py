"""Scaled-down multi-domain NLU: per-domain IC + NER, ranking, and SER.

Every domain owns a MaxEnt intent classifier (with an OUT_OF_DOMAIN intent
fed by downsampled other-domain data) and a CRF slot tagger trained on that
domain only. Interpretation produces one hypothesis per domain, ranked by
the product of the intent probability and the CRF path confidence.

SER counts the intent as one reference slot and intent mistakes as
substitutions; slot alignment is per slot type with exact value matching.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import crf as crf_mod
from .corpus import OUT_OF_DOMAIN, Corpus, Utterance, bio_spans
from .crf import CrfModel, crf_train, decode_with_confidence, extract_token_features
from .features import FeatureConfig, extract_ngrams
from .linear import MaxEntModel, TrainConfig, predict_maxent, train_maxent

FORMAT_VERSION = 1


class NluError(ValueError):
    pass


@dataclass
class NluTrainConfig:
    ic_features: FeatureConfig = field(default_factory=FeatureConfig)
    ner_features: FeatureConfig = field(default_factory=crf_mod.default_crf_feature_config)
    ic_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=5, learning_rate=0.1, l2=1e-6))
    ner_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=4, learning_rate=0.1, l2=1e-6))
    ood_ratio: float = 2.0
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "ic_features": self.ic_features.to_dict(),
            "ner_features": self.ner_features.to_dict(),
            "ic_train": self.ic_train.to_dict(),
            "ner_train": self.ner_train.to_dict(),
            "ood_ratio": self.ood_ratio,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NluTrainConfig":
        cfg = cls()
        if "ic_features" in d:
            cfg.ic_features = FeatureConfig.from_dict(d["ic_features"])
        if "ner_features" in d:
            cfg.ner_features = FeatureConfig.from_dict(d["ner_features"])
        if "ic_train" in d:
            cfg.ic_train = TrainConfig.from_dict(d["ic_train"])
        if "ner_train" in d:
            cfg.ner_train = TrainConfig.from_dict(d["ner_train"])
        cfg.ood_ratio = float(d.get("ood_ratio", cfg.ood_ratio))
        cfg.seed = int(d.get("seed", cfg.seed))
        return cfg


@dataclass(frozen=True)
class Hypothesis:
    domain: str
    intent: str
    slots: tuple[tuple[str, str], ...]
    confidence: float

    def to_dict(self) -> dict:
        return {
            "domain": self.domain,
            "intent": self.intent,
            "slots": [list(s) for s in self.slots],
            "confidence": self.confidence,
        }


@dataclass
class SerBreakdown:
    insertions: int = 0
    deletions: int = 0
    substitutions: int = 0
    reference_slots: int = 1

    @property
    def errors(self) -> int:
        return self.insertions + self.deletions + self.substitutions

    def ser(self) -> float:
        return self.errors / self.reference_slots


@dataclass
class NluSystem:
    domains: tuple[str, ...]
    ic: dict[str, MaxEntModel]
    ner: dict[str, CrfModel]
    config: NluTrainConfig

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "kind": "nlu-system",
            "domains": list(self.domains),
            "config": self.config.to_dict(),
            "ic": {d: m.to_dict() for d, m in self.ic.items()},
            "ner": {d: m.to_dict() for d, m in self.ner.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NluSystem":
        if d.get("kind") != "nlu-system":
            raise NluError(f"expected nlu-system blob, got {d.get('kind')!r}")
        return cls(
            domains=tuple(d["domains"]),
            ic={k: MaxEntModel.from_dict(v) for k, v in d["ic"].items()},
            ner={k: CrfModel.from_dict(v) for k, v in d["ner"].items()},
            config=NluTrainConfig.from_dict(d["config"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NluSystem":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _derive_seed(seed: int, tag: str) -> int:
    from .features import stable_hash64

    return stable_hash64(f"{seed}:{tag}") & 0x7FFFFFFF


def train_nlu(
    train: Corpus, config: NluTrainConfig | None = None, domains: Sequence[str] | None = None
) -> NluSystem:
    """One IC and one NER model per domain.

    IC sees the domain's own utterances with their intents plus a seeded
    downsample of everything else labeled OUT_OF_DOMAIN; NER sees the
    domain's utterances only.
    """
    config = config or NluTrainConfig()
    domain_list = list(domains) if domains is not None else sorted(train.domains())
    if not domain_list:
        raise NluError("training corpus has no domains")

    by_domain: dict[str, list[Utterance]] = {d: [] for d in domain_list}
    others: dict[str, list[Utterance]] = {d: [] for d in domain_list}
    for utt in train:
        for d in domain_list:
            (by_domain if utt.domain == d else others)[d].append(utt)

    for d in domain_list:
        if not by_domain[d]:
            raise NluError(f"domain {d} has zero utterances")

    ic_models: dict[str, MaxEntModel] = {}
    ner_models: dict[str, CrfModel] = {}
    for d in domain_list:
        rng = np.random.default_rng(_derive_seed(config.seed, f"ood:{d}"))
        own = by_domain[d]
        limit = int(config.ood_ratio * len(own))
        rest = others[d]
        if len(rest) > limit:
            keep = np.sort(rng.choice(len(rest), size=limit, replace=False))
            rest = [rest[i] for i in keep]
        examples = [
            (extract_ngrams(u.tokens, config.ic_features), u.intent) for u in own
        ] + [(extract_ngrams(u.tokens, config.ic_features), OUT_OF_DOMAIN) for u in rest]
        labels = sorted({u.intent for u in own} | {OUT_OF_DOMAIN})
        ic_cfg = TrainConfig(**{**config.ic_train.to_dict(), "seed": _derive_seed(config.seed, f"ic:{d}")})
        ic_models[d] = train_maxent(
            examples, ic_cfg, hash_bits=config.ic_features.hash_bits, class_labels=labels
        )

        sequences = [
            (extract_token_features(u.tokens, config.ner_features), list(u.bio_tags))
            for u in own
            if len(u.tokens) > 0
        ]
        ner_cfg = TrainConfig(**{**config.ner_train.to_dict(), "seed": _derive_seed(config.seed, f"ner:{d}")})
        ner_models[d] = crf_train(sequences, ner_cfg, feature_config=config.ner_features)

    return NluSystem(domains=tuple(domain_list), ic=ic_models, ner=ner_models, config=config)


def _best_non_ood(probs: dict[str, float]) -> tuple[str, float]:
    candidates = sorted(
        ((intent, p) for intent, p in probs.items() if intent != OUT_OF_DOMAIN),
        key=lambda ip: (-ip[1], ip[0]),
    )
    return candidates[0]


def interpret(system: NluSystem, tokens: Sequence[str]) -> list[Hypothesis]:
    """One hypothesis per domain, sorted by confidence then domain name."""
    fv = extract_ngrams(tokens, system.config.ic_features)
    feats = (
        extract_token_features(tokens, system.config.ner_features) if tokens else None
    )
    hypotheses = []
    for d in system.domains:
        probs = predict_maxent(system.ic[d], fv)
        intent, p_ic = _best_non_ood(probs)
        if feats is None:
            slots: tuple[tuple[str, str], ...] = ()
            p_crf = 1.0
        else:
            path, p_crf = decode_with_confidence(system.ner[d], feats)
            slots = tuple(
                (slot_type, " ".join(tokens[start:end]))
                for slot_type, start, end in bio_spans(path)
            )
        hypotheses.append(
            Hypothesis(domain=d, intent=intent, slots=slots, confidence=p_ic * p_crf)
        )
    hypotheses.sort(key=lambda h: (-h.confidence, h.domain))
    return hypotheses


def top_hypotheses(system: NluSystem, tokens_list: Sequence[Sequence[str]]) -> list[Hypothesis]:
    """Batched top-1 interpretation; same ranking rule as interpret().

    A pooled sparse matrix drives every domain's IC scores, and the per-domain
    NER decodes run through the batched CRF path.
    """
    from .crf import TokenFeatureMatrix, batch_decode_with_confidence
    from .features import stack_vectors

    n = len(tokens_list)
    if n == 0:
        return []
    vectors = [extract_ngrams(tokens, system.config.ic_features) for tokens in tokens_list]
    matrix = stack_vectors(vectors, system.config.ic_features.dim)
    feats_list = [
        extract_token_features(tokens, system.config.ner_features)
        if len(tokens) > 0
        else crf_mod.TokenFeatures(vectors=())
        for tokens in tokens_list
    ]
    tfm = TokenFeatureMatrix(feats_list, system.config.ner_features.dim)

    domain_order = sorted(system.domains)
    best_conf = np.full(n, -1.0)
    best_idx = np.zeros(n, dtype=np.int64)
    per_domain: list[tuple[list[str], np.ndarray, list]] = []
    for k, d in enumerate(domain_order):
        ic = system.ic[d]
        scores = np.asarray(matrix @ ic.weights.T) + ic.biases
        z = scores - scores.max(axis=1, keepdims=True)
        probs = np.exp(z)
        probs /= probs.sum(axis=1, keepdims=True)
        non_ood = [i for i, c in enumerate(ic.class_labels) if c != OUT_OF_DOMAIN]
        sub = probs[:, non_ood]
        pick = np.argmax(sub, axis=1)  # class_labels sorted, so first max = lowest name
        intents = [ic.class_labels[non_ood[j]] for j in pick]
        p_ic = sub[np.arange(n), pick]

        paths, p_crf = batch_decode_with_confidence(system.ner[d], tfm)
        conf = p_ic * p_crf
        # strict > keeps the earlier (alphabetically smaller) domain on ties
        better = conf > best_conf
        best_idx[better] = k
        best_conf[better] = conf[better]
        per_domain.append((intents, conf, paths))

    out: list[Hypothesis] = []
    for i in range(n):
        k = int(best_idx[i])
        intents, conf, paths = per_domain[k]
        tokens = tokens_list[i]
        slots = tuple(
            (slot_type, " ".join(tokens[start:end]))
            for slot_type, start, end in bio_spans(paths[i])
        )
        out.append(
            Hypothesis(
                domain=domain_order[k],
                intent=intents[i],
                slots=slots,
                confidence=float(conf[i]),
            )
        )
    return out


def score_ser(reference: Utterance, hypothesis: Hypothesis) -> SerBreakdown:
    """Count slot errors against the reference; the intent is one slot."""
    breakdown = SerBreakdown(reference_slots=1 + len(reference.slots()))
    if hypothesis.intent != reference.intent:
        breakdown.substitutions += 1

    gold_by_type: dict[str, Counter] = {}
    for slot_type, value in reference.slots():
        gold_by_type.setdefault(slot_type, Counter())[value] += 1
    hyp_by_type: dict[str, Counter] = {}
    for slot_type, value in hypothesis.slots:
        hyp_by_type.setdefault(slot_type, Counter())[value] += 1

    for slot_type in sorted(set(gold_by_type) | set(hyp_by_type)):
        gold = gold_by_type.get(slot_type, Counter())
        hyp = hyp_by_type.get(slot_type, Counter())
        matches = sum((gold & hyp).values())
        gold_left = sum(gold.values()) - matches
        hyp_left = sum(hyp.values()) - matches
        swapped = min(gold_left, hyp_left)
        breakdown.substitutions += swapped
        breakdown.deletions += gold_left - swapped
        breakdown.insertions += hyp_left - swapped
    return breakdown


@dataclass
class UtteranceErrors:
    id: str
    domain: str
    errors: int
    reference_slots: int


@dataclass
class SerReport:
    aggregate: float
    per_domain: dict[str, float]
    per_utterance: list[UtteranceErrors]

    def to_dict(self) -> dict:
        return {
            "aggregate_ser": self.aggregate,
            "per_domain_ser": dict(sorted(self.per_domain.items())),
            "per_utterance": [
                {"id": u.id, "domain": u.domain, "errors": u.errors, "reference_slots": u.reference_slots}
                for u in self.per_utterance
            ],
        }


def evaluate_ser(system: NluSystem, test: Corpus) -> SerReport:
    if len(test) == 0:
        raise NluError("test corpus is empty")
    tops = top_hypotheses(system, [u.tokens for u in test])
    per_utterance: list[UtteranceErrors] = []
    domain_err: dict[str, int] = {}
    domain_ref: dict[str, int] = {}
    for utt, top in zip(test, tops):
        breakdown = score_ser(utt, top)
        per_utterance.append(
            UtteranceErrors(
                id=utt.id,
                domain=utt.domain,
                errors=breakdown.errors,
                reference_slots=breakdown.reference_slots,
            )
        )
        domain_err[utt.domain] = domain_err.get(utt.domain, 0) + breakdown.errors
        domain_ref[utt.domain] = domain_ref.get(utt.domain, 0) + breakdown.reference_slots
    total_err = sum(domain_err.values())
    total_ref = sum(domain_ref.values())
    return SerReport(
        aggregate=total_err / total_ref,
        per_domain={d: domain_err[d] / domain_ref[d] for d in domain_err},
        per_utterance=per_utterance,
    )
