"""Utterance data model, JSONL corpora, splits, and the synthetic generator.

The JSONL schema is the single on-disk format for annotated data:

    {"id": "u1", "text": "read me a book", "tokens": ["read", "me", "a", "book"],
     "domain": "Books", "intent": "ReadBookIntent",
     "bio_tags": ["O", "O", "O", "O"], "source": "live"}

Unknown extra keys are ignored on read and never emitted on write. Tokens are
taken as-is; the loader never re-tokenizes ``text``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

OUT_OF_DOMAIN = "OUT_OF_DOMAIN"
SOURCES = ("live", "grammar", "noise")

_JSONL_KEYS = ("id", "text", "tokens", "domain", "intent", "bio_tags", "source")


class CorpusError(ValueError):
    """A corpus file or utterance violates the schema or an invariant."""


def check_bio(tags: Iterable[str]) -> str | None:
    """Return a human-readable violation for a BIO tag sequence, or None.

    Every tag must be ``O``, ``B-<type>``, or ``I-<type>``, and every ``I-X``
    must directly follow a ``B-X`` or ``I-X`` with the same type.
    """
    prev_type: str | None = None
    for pos, tag in enumerate(tags):
        if tag == "O":
            prev_type = None
            continue
        if len(tag) < 3 or tag[1] != "-" or tag[0] not in "BI":
            return f"malformed BIO tag {tag!r} at position {pos}"
        slot_type = tag[2:]
        if tag[0] == "I" and prev_type != slot_type:
            return f"I-{slot_type} without preceding B-{slot_type}"
        prev_type = slot_type
    return None


def bio_spans(tags: Iterable[str]) -> list[tuple[str, int, int]]:
    """Decode a BIO sequence into (slot_type, start, end) spans, end exclusive."""
    seq = list(tags)
    spans: list[tuple[str, int, int]] = []
    start = -1
    cur: str | None = None
    for pos, tag in enumerate(seq):
        if tag.startswith("I-") and cur == tag[2:]:
            continue
        if cur is not None:
            spans.append((cur, start, pos))
            cur = None
        if tag.startswith("B-"):
            cur = tag[2:]
            start = pos
    if cur is not None:
        spans.append((cur, start, len(seq)))
    return spans


@dataclass(frozen=True)
class Utterance:
    """One annotated utterance; the atom of pools and corpora."""

    id: str
    text: str
    tokens: tuple[str, ...]
    domain: str
    intent: str
    bio_tags: tuple[str, ...]
    source: str = "live"

    def validate(self) -> None:
        if not self.id:
            raise CorpusError("empty id")
        if len(self.bio_tags) != len(self.tokens):
            raise CorpusError(
                f"bio_tags length {len(self.bio_tags)} != tokens length {len(self.tokens)}"
            )
        if self.source not in SOURCES:
            raise CorpusError(f"unknown source {self.source!r}")
        problem = check_bio(self.bio_tags)
        if problem is not None:
            raise CorpusError(problem)
        if self.source == "noise" and (
            self.domain != OUT_OF_DOMAIN or self.intent != OUT_OF_DOMAIN
        ):
            raise CorpusError("noise must be OUT_OF_DOMAIN")

    def slots(self) -> list[tuple[str, str]]:
        """Gold slots as (slot_type, value) pairs from the BIO annotation."""
        return [
            (slot_type, " ".join(self.tokens[start:end]))
            for slot_type, start, end in bio_spans(self.bio_tags)
        ]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "tokens": list(self.tokens),
            "domain": self.domain,
            "intent": self.intent,
            "bio_tags": list(self.bio_tags),
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Utterance":
        missing = [k for k in _JSONL_KEYS if k not in d and k != "source"]
        if missing:
            raise CorpusError(f"missing fields: {', '.join(missing)}")
        utt = cls(
            id=str(d["id"]),
            text=str(d["text"]),
            tokens=tuple(str(t) for t in d["tokens"]),
            domain=str(d["domain"]),
            intent=str(d["intent"]),
            bio_tags=tuple(str(t) for t in d["bio_tags"]),
            source=str(d.get("source", "live")),
        )
        utt.validate()
        return utt


class Corpus:
    """Immutable ordered collection of utterances with a unique-id index."""

    def __init__(self, utterances: Iterable[Utterance]):
        self._utterances: tuple[Utterance, ...] = tuple(utterances)
        self._index: dict[str, int] = {}
        for i, utt in enumerate(self._utterances):
            if utt.id in self._index:
                raise CorpusError(f"duplicate id {utt.id}")
            self._index[utt.id] = i

    def __len__(self) -> int:
        return len(self._utterances)

    def __iter__(self) -> Iterator[Utterance]:
        return iter(self._utterances)

    def __contains__(self, utt_id: str) -> bool:
        return utt_id in self._index

    def __getitem__(self, utt_id: str) -> Utterance:
        return self._utterances[self._index[utt_id]]

    def ids(self) -> list[str]:
        return [u.id for u in self._utterances]

    def domains(self) -> list[str]:
        """Distinct non-noise domains in first-appearance order."""
        seen: dict[str, None] = {}
        for u in self._utterances:
            if u.domain != OUT_OF_DOMAIN:
                seen.setdefault(u.domain, None)
        return list(seen)

    def filter(self, pred) -> "Corpus":
        return Corpus(u for u in self._utterances if pred(u))

    def save(self, path: str | Path) -> None:
        p = Path(path)
        with p.open("w", encoding="utf-8") as f:
            for utt in self._utterances:
                f.write(json.dumps(utt.to_dict(), ensure_ascii=False) + "\n")


def load_corpus(path: str | Path) -> Corpus:
    """Load and validate a JSONL corpus, reporting the offending line on error."""
    p = Path(path)
    utterances: list[Utterance] = []
    seen: set[str] = set()
    with p.open("r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"invalid JSON at line {line_no}: {e.msg}") from e
            try:
                utt = Utterance.from_dict(raw)
            except CorpusError as e:
                raise CorpusError(f"{e} at line {line_no}") from e
            if utt.id in seen:
                raise CorpusError(f"duplicate id {utt.id} at line {line_no}")
            seen.add(utt.id)
            utterances.append(utt)
    return Corpus(utterances)


# --------------------------------------------------------------------------
# Splitting
# --------------------------------------------------------------------------

def _hash64(seed: int, s: str) -> int:
    from .features import stable_hash64

    return stable_hash64(f"{seed}:{s}")


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    pool_fraction: float
    test_fraction: float
    seed: int = 0

    def validate(self) -> None:
        fractions = (self.train_fraction, self.pool_fraction, self.test_fraction)
        if any(f <= 0 for f in fractions):
            raise CorpusError("split fractions must be positive")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise CorpusError(f"split fractions sum to {sum(fractions)}, expected 1")


def split_corpus(corpus: Corpus, spec: SplitSpec) -> tuple[Corpus, Corpus, Corpus]:
    """Partition a corpus into (train, pool, test), stratified per domain.

    Within each domain, ids are ordered by a stable hash of (id, seed) and cut
    at the requested fractions, so every domain's proportions are exact to
    within one utterance and the assignment depends only on the corpus id set
    and the spec, never on file order.
    """
    spec.validate()
    if len(corpus) == 0:
        raise CorpusError("cannot split an empty corpus")

    by_domain: dict[str, list[str]] = {}
    for utt in corpus:
        by_domain.setdefault(utt.domain, []).append(utt.id)

    assignment: dict[str, int] = {}
    for ids in by_domain.values():
        ranked = sorted(ids, key=lambda i: (_hash64(spec.seed, i), i))
        n = len(ranked)
        n_train = round(spec.train_fraction * n)
        n_pool = round((spec.train_fraction + spec.pool_fraction) * n) - n_train
        for rank, utt_id in enumerate(ranked):
            if rank < n_train:
                assignment[utt_id] = 0
            elif rank < n_train + n_pool:
                assignment[utt_id] = 1
            else:
                assignment[utt_id] = 2

    buckets: tuple[list[Utterance], list[Utterance], list[Utterance]] = ([], [], [])
    for utt in corpus:
        buckets[assignment[utt.id]].append(utt)
    return Corpus(buckets[0]), Corpus(buckets[1]), Corpus(buckets[2])


def augment_negatives(train: Corpus, noise: Corpus) -> Corpus:
    """Append noise utterances (negative-class padding) to a training corpus."""
    for utt in noise:
        if utt.source != "noise" or utt.domain != OUT_OF_DOMAIN:
            raise CorpusError("noise must be OUT_OF_DOMAIN")
        if utt.id in train:
            raise CorpusError(f"id collision between train and noise: {utt.id}")
    return Corpus(list(train) + list(noise))


# --------------------------------------------------------------------------
# Synthetic corpus generation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthIntent:
    name: str
    templates: tuple[str, ...]


@dataclass(frozen=True)
class SynthDomain:
    """One block of generated data; a domain name may appear in several
    blocks (e.g. a restricted grammar-source block plus a full live block)."""

    name: str
    intents: tuple[SynthIntent, ...]
    lexicons: dict[str, tuple[str, ...]]
    count: int
    source: str = "live"


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a deterministic synthetic corpus.

    ``template_zipf``/``lexicon_zipf`` skew sampling towards early entries
    (probability proportional to 1/rank^s); 0 means uniform. Skewed sampling
    leaves the tail of each domain under-represented in any random subset,
    which is what gives informativeness-seeking selection room to matter.
    """

    domains: tuple[SynthDomain, ...]
    noise_count: int = 0
    seed: int = 0
    template_zipf: float = 0.0
    lexicon_zipf: float = 0.0

    def validate(self) -> None:
        if self.noise_count < 0:
            raise CorpusError("noise_count must be >= 0")
        for domain in self.domains:
            if domain.count < 0:
                raise CorpusError(f"negative count for domain {domain.name}")
            if domain.source not in ("live", "grammar"):
                raise CorpusError(f"bad source {domain.source!r} for domain {domain.name}")
            templates = [t for intent in domain.intents for t in intent.templates]
            if not templates:
                raise CorpusError(f"empty template list for domain {domain.name}")
            for template in templates:
                for slot_type in _template_slots(template):
                    if not domain.lexicons.get(slot_type):
                        raise CorpusError(
                            f"template slot {slot_type} in domain {domain.name} has no lexicon"
                        )

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        domains = tuple(
            SynthDomain(
                name=dom["name"],
                intents=tuple(
                    SynthIntent(name=i["name"], templates=tuple(i["templates"]))
                    for i in dom["intents"]
                ),
                lexicons={k: tuple(v) for k, v in dom.get("lexicons", {}).items()},
                count=int(dom["count"]),
                source=str(dom.get("source", "live")),
            )
            for dom in d["domains"]
        )
        return cls(
            domains=domains,
            noise_count=int(d.get("noise_count", 0)),
            seed=int(d.get("seed", 0)),
            template_zipf=float(d.get("template_zipf", 0.0)),
            lexicon_zipf=float(d.get("lexicon_zipf", 0.0)),
        )


def _template_slots(template: str) -> list[str]:
    slots = []
    for piece in template.split():
        if piece.startswith("[") and piece.endswith("]"):
            slots.append(piece[1:-1])
    return slots


def _zipf_weights(n: int, s: float):
    import numpy as np

    if s <= 0:
        return np.full(n, 1.0 / n)
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def synth_generate(spec: SynthSpec) -> Corpus:
    """Generate a corpus by filling slot-typed templates from lexicons.

    Deterministic for a fixed seed. Noise utterances are 1-3 token fragments
    drawn from the union of all lexicon entries, labeled OUT_OF_DOMAIN.
    """
    import numpy as np

    spec.validate()
    rng = np.random.default_rng(spec.seed)
    utterances: list[Utterance] = []
    next_index: dict[str, int] = {}

    for domain in spec.domains:
        per_intent_weights = [
            _zipf_weights(len(intent.templates), spec.template_zipf)
            for intent in domain.intents
        ]
        lex_weights = {
            slot: _zipf_weights(len(entries), spec.lexicon_zipf)
            for slot, entries in domain.lexicons.items()
        }
        for k in range(domain.count):
            i = int(rng.integers(0, len(domain.intents)))
            intent = domain.intents[i]
            intent_name = intent.name
            template = intent.templates[
                rng.choice(len(intent.templates), p=per_intent_weights[i])
            ]
            tokens: list[str] = []
            tags: list[str] = []
            for piece in template.split():
                if piece.startswith("[") and piece.endswith("]"):
                    slot_type = piece[1:-1]
                    entries = domain.lexicons[slot_type]
                    filler = entries[rng.choice(len(entries), p=lex_weights[slot_type])]
                    filler_tokens = filler.split()
                    tokens.extend(filler_tokens)
                    tags.append(f"B-{slot_type}")
                    tags.extend(f"I-{slot_type}" for _ in filler_tokens[1:])
                else:
                    tokens.append(piece)
                    tags.append("O")
            serial = next_index.get(domain.name, 0)
            next_index[domain.name] = serial + 1
            utterances.append(
                Utterance(
                    id=f"synth-{domain.name}-{serial}",
                    text=" ".join(tokens),
                    tokens=tuple(tokens),
                    domain=domain.name,
                    intent=intent_name,
                    bio_tags=tuple(tags),
                    source=domain.source,
                )
            )

    vocab = sorted(
        {
            token
            for domain in spec.domains
            for entries in domain.lexicons.values()
            for entry in entries
            for token in entry.split()
        }
    )
    for k in range(spec.noise_count):
        length = int(rng.integers(1, 4))
        tokens = [vocab[int(rng.integers(0, len(vocab)))] for _ in range(length)]
        utterances.append(
            Utterance(
                id=f"synth-noise-{k}",
                text=" ".join(tokens),
                tokens=tuple(tokens),
                domain=OUT_OF_DOMAIN,
                intent=OUT_OF_DOMAIN,
                bio_tags=tuple("O" for _ in tokens),
                source="noise",
            )
        )

    for utt in utterances:
        utt.validate()
    return Corpus(utterances)
