"""Checkpointed simulation of selection experiments over a hidden-label pool.

A run = one (algorithm, repeat) pair: hide the pool labels, select for every
target (committee algorithms iterate select/reveal/advance; random baselines
sample once), retrain the full NLU system on initial-train plus everything
selected, and score SER on the held-out test split against the shared
baseline system. Runs only ever see PoolCandidate views of the pool; true
labels come back through the annotation oracle at reveal time.

Every run checkpoints its per-iteration selections and final result under
out_dir/runs/, so an interrupted experiment resumes to the identical state.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import OUT_OF_DOMAIN, Corpus, SplitSpec, SynthSpec, load_corpus, split_corpus, synth_generate
from .engine import (
    AlConfig,
    CommitteeConfig,
    FeatureCache,
    PoolFeatures,
    RANDOM_BASELINES,
    SelectionState,
    advance,
    dedupe_multi_target,
    derive_seed,
    hide_labels,
    random_uniform,
    select_batch,
    train_selection_models,
    write_audit,
)
from .features import FeatureConfig
from .linear import TrainConfig
from .nlu import NluSystem, NluTrainConfig, evaluate_ser, train_nlu
from .stats import PairedErrors, bootstrap_significance, relative_reduction, wilcoxon_signed_rank


class ConfigError(ValueError):
    pass


class AbortRequested(RuntimeError):
    """Raised by iteration hooks to stop an experiment mid-flight."""


def algo_label(algo: dict) -> str:
    """Report row label; lets one configuration appear at several budgets."""
    return algo.get("label", algo["name"])


@dataclass
class TrainingKnobs:
    """Learning-rate/epoch/width settings shared by every run of an experiment."""

    hash_bits: int = 18
    crf_hash_bits: int = 16
    binary_epochs: int = 5
    committee_crf_epochs: int = 4
    ic_epochs: int = 5
    ner_epochs: int = 4
    learning_rate: float = 0.1
    l2: float = 1e-6
    ood_ratio: float = 2.0
    neg_pos_ratio_cap: float = 10.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingKnobs":
        knobs = cls()
        for key, value in d.items():
            if not hasattr(knobs, key):
                raise ConfigError(f"unknown training knob {key!r}")
            setattr(knobs, key, type(getattr(knobs, key))(value))
        return knobs

    def committee_config(self) -> CommitteeConfig:
        return CommitteeConfig(
            feature_config=FeatureConfig(hash_bits=self.hash_bits),
            crf_feature_config=FeatureConfig(ngram_orders=(1,), hash_bits=self.crf_hash_bits),
            binary_train=TrainConfig(
                epochs=self.binary_epochs,
                learning_rate=self.learning_rate,
                l2=self.l2,
                neg_pos_ratio_cap=self.neg_pos_ratio_cap,
            ),
            crf_train=TrainConfig(
                epochs=self.committee_crf_epochs,
                learning_rate=self.learning_rate,
                l2=self.l2,
            ),
        )

    def nlu_config(self, seed: int) -> NluTrainConfig:
        return NluTrainConfig(
            ic_features=FeatureConfig(hash_bits=self.hash_bits),
            ner_features=FeatureConfig(ngram_orders=(1,), hash_bits=self.crf_hash_bits),
            ic_train=TrainConfig(epochs=self.ic_epochs, learning_rate=self.learning_rate, l2=self.l2),
            ner_train=TrainConfig(epochs=self.ner_epochs, learning_rate=self.learning_rate, l2=self.l2),
            ood_ratio=self.ood_ratio,
            seed=seed,
        )


@dataclass
class ExperimentConfig:
    corpus_path: str | None
    synth_spec: SynthSpec | None
    split: SplitSpec
    targets: tuple[str, ...]
    algorithms: tuple[dict, ...]  # {"name": ..., "iterations": ...}
    budget_per_target: int
    repeats: int
    seed: int
    out_dir: str
    training: TrainingKnobs = field(default_factory=TrainingKnobs)

    def validate(self) -> None:
        if self.corpus_path is None and self.synth_spec is None:
            raise ConfigError("config needs a corpus path or a synth spec")
        if not self.targets:
            raise ConfigError("no target domains")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.budget_per_target < 1:
            raise ConfigError("budget_per_target must be >= 1")
        seen = set()
        for algo in self.algorithms:
            name = algo.get("name")
            label = algo_label(algo)
            if label in seen:
                raise ConfigError(f"algorithm {label!r} listed twice")
            seen.add(label)
            iterations = int(algo.get("iterations", 6))
            AlConfig(name=name, iterations=iterations, batch_size=1)  # validates name
            if name not in RANDOM_BASELINES and self.budget_per_target % iterations:
                raise ConfigError(
                    f"budget {self.budget_per_target} not divisible by "
                    f"{iterations} iterations for {name}"
                )

    def al_config(self, algo: dict, repeat: int) -> AlConfig:
        name = algo["name"]
        iterations = int(algo.get("iterations", 6))
        batch = self.budget_per_target // iterations if name not in RANDOM_BASELINES else self.budget_per_target
        return AlConfig(
            name=name,
            iterations=iterations,
            batch_size=max(batch, 1),
            seed=derive_seed(self.seed, f"{name}:r{repeat}"),
        )

    def to_dict(self) -> dict:
        corpus: dict = {}
        if self.corpus_path is not None:
            corpus["path"] = self.corpus_path
        if self.synth_spec is not None:
            corpus["synth"] = _synth_to_dict(self.synth_spec)
        return {
            "corpus": corpus,
            "split": {
                "train_fraction": self.split.train_fraction,
                "pool_fraction": self.split.pool_fraction,
                "test_fraction": self.split.test_fraction,
                "seed": self.split.seed,
            },
            "targets": list(self.targets),
            "algorithms": [dict(a) for a in self.algorithms],
            "budget_per_target": self.budget_per_target,
            "repeats": self.repeats,
            "seed": self.seed,
            "out_dir": self.out_dir,
            "training": self.training.to_dict(),
        }

    def canonical_dict(self) -> dict:
        """Config identity: everything except where the outputs land."""
        payload = self.to_dict()
        payload.pop("out_dir")
        return payload

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        corpus = d.get("corpus", {})
        synth_spec = None
        if "synth" in corpus:
            if corpus["synth"] == "reference":
                from .reference import reference_synth_spec

                synth_spec = reference_synth_spec()
            else:
                synth_spec = SynthSpec.from_dict(corpus["synth"])
        split = d.get("split", {})
        try:
            config = cls(
                corpus_path=corpus.get("path"),
                synth_spec=synth_spec,
                split=SplitSpec(
                    train_fraction=float(split["train_fraction"]),
                    pool_fraction=float(split["pool_fraction"]),
                    test_fraction=float(split["test_fraction"]),
                    seed=int(split.get("seed", 0)),
                ),
                targets=tuple(d["targets"]),
                algorithms=tuple(d["algorithms"]),
                budget_per_target=int(d["budget_per_target"]),
                repeats=int(d.get("repeats", 1)),
                seed=int(d.get("seed", 0)),
                out_dir=str(d.get("out_dir", "sim-out")),
                training=TrainingKnobs.from_dict(d.get("training", {})),
            )
        except KeyError as e:
            raise ConfigError(f"missing config field: {e}") from e
        config.validate()
        return config


def _synth_to_dict(spec: SynthSpec) -> dict:
    return {
        "seed": spec.seed,
        "noise_count": spec.noise_count,
        "template_zipf": spec.template_zipf,
        "lexicon_zipf": spec.lexicon_zipf,
        "domains": [
            {
                "name": dom.name,
                "count": dom.count,
                "source": dom.source,
                "intents": [
                    {"name": i.name, "templates": list(i.templates)} for i in dom.intents
                ],
                "lexicons": {k: list(v) for k, v in dom.lexicons.items()},
            }
            for dom in spec.domains
        ],
    }


# --------------------------------------------------------------------------
# Data preparation (shared by all runs, cached in out_dir)
# --------------------------------------------------------------------------


def _canonical(d: dict) -> str:
    return json.dumps(d, sort_keys=True)


def prepare_experiment(config: ExperimentConfig) -> Path:
    """Create out_dir with the split corpora, baseline system, and metadata."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "runs").mkdir(exist_ok=True)
    (out / "audit").mkdir(exist_ok=True)

    config_path = out / "config.json"
    payload = _canonical(config.canonical_dict())
    if config_path.exists():
        if config_path.read_text(encoding="utf-8") != payload:
            raise ConfigError(
                f"out_dir {out} already holds a different experiment config; "
                "use a fresh directory or pass the same config"
            )
    else:
        config_path.write_text(payload, encoding="utf-8")

    have_splits = all(
        (out / name).exists() for name in ("train.jsonl", "pool.jsonl", "test.jsonl")
    )
    if not have_splits:
        if config.corpus_path is not None:
            corpus = load_corpus(config.corpus_path)
        else:
            corpus = synth_generate(config.synth_spec)
        for target in config.targets:
            if target not in corpus.domains():
                raise ConfigError(f"target {target!r} not present in the corpus")
        train, pool, test = split_corpus(corpus, config.split)
        # Role filters for the new-domain setting: grammar data exists only
        # in training, and target domains start with (almost) no annotated
        # live data; their live traffic lives in the pool and the test set.
        target_set = set(config.targets)

        def in_initial_train(u) -> bool:
            if u.source == "live" and u.domain in target_set:
                return derive_seed(config.seed, f"live-seed:{u.id}") % 10 == 0
            return True

        train.filter(in_initial_train).save(out / "train.jsonl")
        pool.filter(lambda u: u.source != "grammar").save(out / "pool.jsonl")
        test.filter(lambda u: u.source != "grammar").save(out / "test.jsonl")

    baseline_path = out / "baseline-nlu.json"
    if not baseline_path.exists():
        train = load_corpus(out / "train.jsonl")
        system = train_nlu(train, config.training.nlu_config(derive_seed(config.seed, "baseline")))
        system.save(baseline_path)

    baseline_eval_path = out / "baseline-eval.json"
    if not baseline_eval_path.exists():
        system = NluSystem.load(baseline_path)
        test = load_corpus(out / "test.jsonl")
        report = evaluate_ser(system, test)
        baseline_eval_path.write_text(_canonical(report.to_dict()), encoding="utf-8")

    domains_path = out / "pool-domains.json"
    if not domains_path.exists():
        from .nlu import top_hypotheses

        system = NluSystem.load(baseline_path)
        pool = load_corpus(out / "pool.jsonl")
        candidates = hide_labels(pool)
        tops = top_hypotheses(system, [c.tokens for c in candidates])
        predicted = {c.id: h.domain for c, h in zip(candidates, tops)}
        domains_path.write_text(_canonical(predicted), encoding="utf-8")
    return out


# --------------------------------------------------------------------------
# Single run
# --------------------------------------------------------------------------


def _load_run_checkpoint(path: Path) -> dict:
    if path.exists():
        return json.loads(path.read_text(encoding="utf-8"))
    return {"selection": {}, "audit": {}, "result": None}


def _save_run_checkpoint(path: Path, checkpoint: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(_canonical(checkpoint), encoding="utf-8")
    tmp.replace(path)


def run_single(
    config: ExperimentConfig,
    algo: dict,
    repeat: int,
    iteration_hook: Callable[[str, int, str, int], None] | None = None,
) -> dict:
    """Execute (or resume) one run and return its result payload."""
    out = Path(config.out_dir)
    al_config = config.al_config(algo, repeat)
    label = algo_label(algo)
    run_name = f"{label}-r{repeat}"
    ckpt_path = out / "runs" / f"{run_name}.json"
    checkpoint = _load_run_checkpoint(ckpt_path)
    if checkpoint["result"] is not None:
        return checkpoint["result"]

    train = load_corpus(out / "train.jsonl")
    pool = load_corpus(out / "pool.jsonl")
    oracle = {u.id: u for u in pool}
    candidates = hide_labels(pool)

    per_target_batches: list[tuple[str, list[str]]] = []
    if al_config.name == "Rand-Uniform":
        total = min(config.budget_per_target * len(config.targets), len(candidates))
        sample = random_uniform(candidates, total, al_config.seed)
        per_target_batches.append(("*", sample))
    elif al_config.name == "Rand-Domain":
        predicted = json.loads((out / "pool-domains.json").read_text(encoding="utf-8"))
        rng_seed = al_config.seed
        for target in config.targets:
            matching = [c for c in candidates if predicted[c.id] == target]
            take = min(config.budget_per_target, len(matching))
            batch = (
                random_uniform(matching, take, derive_seed(rng_seed, target))
                if matching
                else []
            )
            per_target_batches.append((target, batch))
    else:
        committee_config = config.training.committee_config()
        pool_features = PoolFeatures(candidates, committee_config)
        cache = FeatureCache(committee_config.feature_config)
        for target in config.targets:
            selected_iters: list[list[str]] = [
                list(batch) for batch in checkpoint["selection"].get(target, [])
            ]
            audit: list[dict] = list(checkpoint["audit"].get(target, []))
            state = SelectionState.initial(target, train, candidates)
            state.audit = audit
            for batch in selected_iters:
                state = advance(state, batch, oracle)
            for iteration in range(state.iteration, al_config.iterations):
                if iteration_hook is not None:
                    iteration_hook(al_config.name, repeat, target, iteration)
                committee = train_selection_models(
                    state.annotated,
                    target,
                    al_config,
                    committee_config,
                    feature_cache=cache,
                    iteration=iteration,
                )
                batch = select_batch(state, committee, al_config, pool_features)
                if batch:
                    state = advance(state, batch, oracle)
                else:
                    state.iteration += 1
                selected_iters.append(batch)
                checkpoint["selection"][target] = selected_iters
                checkpoint["audit"][target] = state.audit
                _save_run_checkpoint(ckpt_path, checkpoint)
            per_target_batches.append(
                (target, [cid for batch in selected_iters for cid in batch])
            )

    merged = dedupe_multi_target(per_target_batches)
    selected = [oracle[cid] for cid in merged]

    in_target = {
        t: sum(1 for u in selected if u.domain == t) for t in config.targets
    }
    noise_selected = sum(1 for u in selected if u.domain == OUT_OF_DOMAIN)
    non_target = len(selected) - noise_selected - sum(in_target.values())

    retrain_corpus = Corpus(list(train) + selected)
    nlu_seed = derive_seed(al_config.seed, "nlu")
    system = train_nlu(retrain_corpus, config.training.nlu_config(nlu_seed))
    test = load_corpus(out / "test.jsonl")
    evaluation = evaluate_ser(system, test)

    result = {
        "algorithm": label,
        "repeat": repeat,
        "selected_total": len(selected),
        "in_target": in_target,
        "noise_selected": noise_selected,
        "non_target": non_target,
        "aggregate_ser": evaluation.aggregate,
        "per_domain_ser": dict(sorted(evaluation.per_domain.items())),
        "per_utterance": [
            [u.id, u.domain, u.errors, u.reference_slots] for u in evaluation.per_utterance
        ],
    }
    checkpoint["result"] = result
    _save_run_checkpoint(ckpt_path, checkpoint)

    audit_path = out / "audit" / f"{run_name}.jsonl"
    audit_path.write_text("", encoding="utf-8")
    for target, _ in per_target_batches:
        write_audit(checkpoint["audit"].get(target, []), audit_path)
    return result


def _run_worker(args: tuple[dict, dict, int]) -> dict:
    config_dict, algo, repeat = args
    config = ExperimentConfig.from_dict(config_dict)
    return run_single(config, algo, repeat)


# --------------------------------------------------------------------------
# Experiment driver and aggregation
# --------------------------------------------------------------------------


def run_simulation(
    config: ExperimentConfig,
    jobs: int = 1,
    resume: bool = False,
    iteration_hook: Callable[[str, int, str, int], None] | None = None,
) -> dict:
    """Run every (algorithm, repeat) pair and write the report files."""
    config.validate()
    started = time.time()
    if not resume:
        existing = list(Path(config.out_dir).glob("runs/*.json"))
        if existing:
            raise ConfigError(
                f"{config.out_dir} already contains {len(existing)} run checkpoint(s); "
                "pass resume=True (--resume) to continue them or use a fresh directory"
            )
    out = prepare_experiment(config)

    specs = [
        (algo, repeat) for algo in config.algorithms for repeat in range(config.repeats)
    ]
    results: list[dict] = []
    timings: dict[str, float] = {}
    if jobs > 1 and iteration_hook is None:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            payloads = [(config.to_dict(), algo, repeat) for algo, repeat in specs]
            for (algo, repeat), result in zip(specs, pool.map(_run_worker, payloads)):
                results.append(result)
    else:
        for algo, repeat in specs:
            t0 = time.time()
            results.append(run_single(config, algo, repeat, iteration_hook))
            timings[f"{algo_label(algo)}-r{repeat}"] = time.time() - t0

    baseline_eval = json.loads((out / "baseline-eval.json").read_text(encoding="utf-8"))
    report = aggregate_report(config, baseline_eval, results)

    from .report import write_report

    write_report(report, out)
    timings["total_s"] = time.time() - started
    (out / "timings.json").write_text(json.dumps(timings, indent=2), encoding="utf-8")
    return report


def _target_pairs(
    results_a: Sequence[dict], results_b: Sequence[dict], targets: Sequence[str]
) -> PairedErrors:
    """Per-(repeat, target-domain utterance) paired error counts."""
    errors_a: list[float] = []
    errors_b: list[float] = []
    slots: list[float] = []
    target_set = set(targets)
    for res_a, res_b in zip(results_a, results_b):
        rows_b = {row[0]: row for row in res_b["per_utterance"]}
        for uid, domain, err, ref in res_a["per_utterance"]:
            if domain not in target_set:
                continue
            other = rows_b[uid]
            errors_a.append(err)
            errors_b.append(other[2])
            slots.append(ref)
    return PairedErrors.from_lists(errors_a, errors_b, slots)


def aggregate_report(
    config: ExperimentConfig, baseline_eval: dict, results: Sequence[dict]
) -> dict:
    by_algo: dict[str, list[dict]] = {}
    for result in results:
        by_algo.setdefault(result["algorithm"], []).append(result)
    for runs in by_algo.values():
        runs.sort(key=lambda r: r["repeat"])

    base_per_domain = baseline_eval["per_domain_ser"]
    rows = []
    for algo in config.algorithms:
        name = algo_label(algo)
        runs = by_algo[name]
        per_target = {}
        target_deltas = []
        for target in config.targets:
            base = base_per_domain[target]
            sers = [run["per_domain_ser"][target] for run in runs]
            deltas = [relative_reduction(base, s) if base > 0 else 0.0 for s in sers]
            per_target[target] = {
                "utt": float(np.mean([run["in_target"][target] for run in runs])),
                "ser": float(np.mean(sers)),
                "delta_ser_pct": float(np.mean(deltas)),
            }
            target_deltas.append(float(np.mean(deltas)))

        row = {
            "algorithm": name,
            "overall_utt": float(
                np.mean([run["selected_total"] - run["noise_selected"] for run in runs])
            ),
            "noise_utt": float(np.mean([run["noise_selected"] for run in runs])),
            "non_target_utt": float(np.mean([run["non_target"] for run in runs])),
            "selected_total": float(np.mean([run["selected_total"] for run in runs])),
            "aggregate_ser": float(np.mean([run["aggregate_ser"] for run in runs])),
            "per_target": per_target,
            "target_delta_ser_mean": float(np.mean(target_deltas)),
            "significance_vs": {},
        }

        for baseline_name in RANDOM_BASELINES:
            if baseline_name == name or baseline_name not in by_algo:
                continue
            # errors_a = baseline so a positive delta means this row improves on it
            pairs = _target_pairs(by_algo[baseline_name], runs, config.targets)
            boot = bootstrap_significance(
                pairs, resamples=1000, seed=derive_seed(config.seed, f"boot:{name}:{baseline_name}")
            )
            diffs = (
                (pairs.errors_a - pairs.errors_b) / pairs.reference_slots
            ).tolist()
            _, wilcoxon_p = wilcoxon_signed_rank(diffs)
            row["significance_vs"][baseline_name] = {
                "bootstrap_p": boot["p"],
                "wilcoxon_p": wilcoxon_p,
                "delta_ser_pct": boot["delta_ser_pct_mean"],
            }
        rows.append(row)

    return {
        "config": config.canonical_dict(),
        "baseline": {
            "aggregate_ser": baseline_eval["aggregate_ser"],
            "per_domain_ser": base_per_domain,
        },
        "algorithms": rows,
    }
