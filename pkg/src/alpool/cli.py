"""Command-line surface.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import (
    CorpusError,
    SplitSpec,
    SynthSpec,
    load_corpus,
    split_corpus,
    synth_generate,
)
from .simulate import ConfigError, ExperimentConfig, TrainingKnobs, run_simulation


def _load_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError(f"no such file: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path} is not valid JSON: {e.msg}") from e


def cmd_synth(args) -> int:
    if args.reference:
        from .reference import reference_synth_spec

        spec = reference_synth_spec()
    else:
        if not args.spec:
            raise ConfigError("synth needs --spec FILE or --reference")
        spec = SynthSpec.from_dict(_load_json(args.spec))
    if args.seed is not None:
        spec = SynthSpec(
            domains=spec.domains,
            noise_count=spec.noise_count,
            seed=args.seed,
            template_zipf=spec.template_zipf,
            lexicon_zipf=spec.lexicon_zipf,
        )
    corpus = synth_generate(spec)
    corpus.save(args.out)
    print(f"wrote {len(corpus)} utterances to {args.out}")
    return 0


def cmd_split(args) -> int:
    corpus = load_corpus(args.corpus)
    spec = SplitSpec(
        train_fraction=args.train_fraction,
        pool_fraction=args.pool_fraction,
        test_fraction=args.test_fraction,
        seed=args.seed,
    )
    train, pool, test = split_corpus(corpus, spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train.save(out / "train.jsonl")
    pool.save(out / "pool.jsonl")
    test.save(out / "test.jsonl")
    print(f"train={len(train)} pool={len(pool)} test={len(test)} -> {out}")
    return 0


def _training_knobs(args) -> TrainingKnobs:
    if getattr(args, "knobs", None):
        return TrainingKnobs.from_dict(_load_json(args.knobs))
    return TrainingKnobs()


def cmd_train_nlu(args) -> int:
    from .nlu import train_nlu

    corpus = load_corpus(args.corpus)
    knobs = _training_knobs(args)
    system = train_nlu(corpus, knobs.nlu_config(args.seed))
    system.save(args.out)
    print(f"trained {len(system.domains)} domains -> {args.out}")
    return 0


def cmd_interpret(args) -> int:
    from .nlu import NluSystem, interpret

    system = NluSystem.load(args.model)
    if args.text is not None:
        token_lists = [args.text.split()]
    elif args.corpus:
        token_lists = [list(u.tokens) for u in load_corpus(args.corpus)]
    else:
        raise ConfigError("interpret needs --text or --corpus")
    for tokens in token_lists:
        hyps = interpret(system, tokens)[: args.top]
        print(json.dumps({"tokens": tokens, "hypotheses": [h.to_dict() for h in hyps]}))
    return 0


def cmd_eval_ser(args) -> int:
    from .nlu import NluSystem, evaluate_ser

    system = NluSystem.load(args.model)
    test = load_corpus(args.test)
    report = evaluate_ser(system, test)
    payload = report.to_dict()
    if args.out:
        Path(args.out).write_text(json.dumps(payload, sort_keys=True, indent=2), encoding="utf-8")
    print(f"aggregate SER {report.aggregate:.4f}")
    for domain, ser in sorted(report.per_domain.items()):
        print(f"  {domain}: {ser:.4f}")
    return 0


def cmd_select(args) -> int:
    from .engine import (
        AlConfig,
        CommitteeConfig,
        SelectionState,
        advance,
        hide_labels,
        select_batch,
        train_selection_models,
        write_audit,
    )

    from .engine import CONFIG_TABLE, RANDOM_BASELINES

    if args.algorithm not in CONFIG_TABLE or args.algorithm in RANDOM_BASELINES:
        raise ConfigError(f"select needs a committee algorithm, got {args.algorithm!r}")
    train = load_corpus(args.train)
    pool = load_corpus(args.pool)
    config = AlConfig(
        name=args.algorithm,
        iterations=max(args.iteration + 1, 1),
        batch_size=args.batch_size,
        seed=args.seed,
    )
    state_path = Path(args.state) if args.state else None
    selected_so_far: list[list[str]] = []
    if state_path and state_path.exists():
        selected_so_far = json.loads(state_path.read_text(encoding="utf-8"))["batches"]

    oracle = {u.id: u for u in pool}
    state = SelectionState.initial(args.target, train, hide_labels(pool))
    annotations = {}
    if args.annotations:
        annotations = {u.id: u for u in load_corpus(args.annotations)}
    for batch in selected_so_far:
        state = advance(state, batch, annotations or oracle)

    committee = train_selection_models(
        state.annotated, args.target, config, CommitteeConfig(), iteration=state.iteration
    )
    batch = select_batch(state, committee, config)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as f:
        for cid in batch:
            candidate = state.pool[cid]
            f.write(json.dumps({"id": cid, "text": candidate.text, "tokens": list(candidate.tokens)}) + "\n")
    if args.audit:
        write_audit(state.audit[-len(batch):] if batch else [], args.audit)
    if state_path:
        selected_so_far.append(batch)
        state_path.write_text(json.dumps({"batches": selected_so_far}), encoding="utf-8")
    print(f"selected {len(batch)} candidates -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    if args.reference:
        from .reference import reference_experiment_dict

        payload = reference_experiment_dict(out_dir=args.out or "reference-out")
    else:
        if not args.config:
            raise ConfigError("simulate needs --config FILE or --reference")
        payload = _load_json(args.config)
    if args.out:
        payload["out_dir"] = args.out
    config = ExperimentConfig.from_dict(payload)
    report = run_simulation(config, jobs=args.jobs, resume=args.resume)
    from .report import render_text

    print(render_text(report))
    print(f"report files in {config.out_dir}")
    return 0


def cmd_significance(args) -> int:
    from .stats import PairedErrors, bootstrap_significance, wilcoxon_signed_rank

    base = _load_json(args.base)["per_utterance"]
    new = _load_json(args.new)["per_utterance"]
    base_by_id = {row["id"]: row for row in base}
    ids = [row["id"] for row in new if row["id"] in base_by_id]
    if not ids:
        raise ConfigError("no overlapping utterance ids between the two evaluations")
    new_by_id = {row["id"]: row for row in new}
    pairs = PairedErrors.from_lists(
        [base_by_id[i]["errors"] for i in ids],
        [new_by_id[i]["errors"] for i in ids],
        [base_by_id[i]["reference_slots"] for i in ids],
    )
    boot = bootstrap_significance(pairs, resamples=args.resamples, seed=args.seed)
    diffs = [
        (base_by_id[i]["errors"] - new_by_id[i]["errors"]) / base_by_id[i]["reference_slots"]
        for i in ids
    ]
    _, wilcoxon_p = wilcoxon_signed_rank(diffs)
    print(
        json.dumps(
            {
                "wilcoxon_p": wilcoxon_p,
                "bootstrap_p": boot["p"],
                "delta_ser_pct": boot["delta_ser_pct_mean"],
            },
            indent=2,
        )
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import AnnotationService, create_app

    service = AnnotationService(
        train=load_corpus(args.train),
        pool=load_corpus(args.pool),
        journal_dir=args.journal_dir,
    )
    app = create_app(service, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alpool", description="pool-based active-learning toolkit for NLU"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--spec", help="SynthSpec JSON file")
    p.add_argument("--reference", action="store_true", help="use the in-repo reference recipe")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", help="split a corpus into train/pool/test")
    p.add_argument("--corpus", required=True)
    p.add_argument("--train-fraction", type=float, required=True)
    p.add_argument("--pool-fraction", type=float, required=True)
    p.add_argument("--test-fraction", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train-nlu", help="train the per-domain IC+NER system")
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--knobs", help="TrainingKnobs JSON file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_nlu)

    p = sub.add_parser("interpret", help="rank hypotheses for utterances")
    p.add_argument("--model", required=True)
    p.add_argument("--text")
    p.add_argument("--corpus")
    p.add_argument("--top", type=int, default=3)
    p.set_defaults(func=cmd_interpret)

    p = sub.add_parser("eval-ser", help="slot error rate on a test corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", help="write the full evaluation JSON here")
    p.set_defaults(func=cmd_eval_ser)

    p = sub.add_parser("select", help="run one selection iteration")
    p.add_argument("--train", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--algorithm", default="Majority-CRF")
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--iteration", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--state", help="JSON state file for iterating")
    p.add_argument("--annotations", help="JSONL corpus with annotations for prior batches")
    p.add_argument("--audit", help="append audit records to this JSONL file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("simulate", help="run a full simulated experiment")
    p.add_argument("--config", help="ExperimentConfig JSON file")
    p.add_argument("--reference", action="store_true", help="run the in-repo reference experiment")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("significance", help="compare two eval-ser outputs")
    p.add_argument("--base", required=True)
    p.add_argument("--new", required=True)
    p.add_argument("--resamples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_significance)

    p = sub.add_parser("serve", help="run the annotation service")
    p.add_argument("--train", required=True)
    p.add_argument("--pool", required=True)
    p.add_argument("--journal-dir", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ui-dir", help="directory with the built annotation UI")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CorpusError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
