"""Command-line interface.

Subcommands: synth, ingest, tokenize, adapt, finetune, eval, matrix,
diagnose, sweep, compare, report, run. Exit codes: 0 success,
1 configuration error, 2 data error, 3 integrity error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import corpus as corpus_mod
from . import diagnostics as diag_mod
from .errors import ConfigurationError, DataError, IntegrityError
from .evaluation import CrossTemporalMatrix, build_matrix, macro_f1, pseudo_perplexity
from .model import (
    Checkpoint,
    ModelConfig,
    TrainConfig,
    adapt,
    finetune,
    init_from,
    init_model,
    per_token_losses,
    predict,
)
from .orchestrator import ExperimentPlan, ExperimentRunner, median_over_seeds, report
from .synthgen import GeneratorSpec, SyntheticCorpus, generate_corpus
from .tokenizer import Vocabulary, train_vocabulary


def _parse_field_map(spec: str) -> dict:
    out = {}
    for part in spec.split(","):
        if "=" not in part:
            raise ConfigurationError(f"bad field-map entry {part!r}, expected name=field")
        key, value = part.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_filters(spec: str) -> list:
    filters = []
    for part in spec.split(","):
        if not part:
            continue
        name, _, arg = part.partition(":")
        if name == "deleted":
            filters.append(corpus_mod.DeletedFilter())
        elif name == "bot_author":
            blocklist = arg.split("+") if arg else []
            filters.append(corpus_mod.BotAuthorFilter(blocklist))
        elif name == "min_length":
            filters.append(corpus_mod.MinLengthFilter(int(arg or 1)))
        else:
            raise ConfigurationError(f"unknown filter {name!r}")
    return filters


def cmd_synth(args) -> int:
    spec_data = yaml.safe_load(Path(args.spec).read_text())
    spec = GeneratorSpec.from_dict(spec_data)
    corpus = generate_corpus(spec)
    corpus.save(args.out)
    print(f"wrote synthetic corpus ({spec.n_periods} periods) to {args.out}")
    return 0


def cmd_ingest(args) -> int:
    field_map = _parse_field_map(args.field_map)
    filters = _parse_filters(args.filters) if args.filters else []
    log: list = []
    stats = corpus_mod.IngestStats()
    docs = corpus_mod.ingest(args.input, field_map, split_role=args.split_role, stats=stats)
    normalized = (
        corpus_mod.Document(
            id=d.id, text=corpus_mod.normalize_text(d.text), timestamp=d.timestamp,
            source_label=d.source_label, split_role=d.split_role, author=d.author,
        )
        for d in docs
    )
    filtered = corpus_mod.filter_documents(normalized, filters, log=log)
    slices = corpus_mod.partition_by_period(filtered, granularity=args.granularity)
    slices = [corpus_mod.deduplicate(sl, log=log) for sl in slices]
    log.append({"filter": "malformed_records", "removed": stats.malformed})
    slices_by_role = {args.split_role: slices}
    manifest = corpus_mod.build_manifest(
        corpus_id=Path(args.input).stem, slices_by_role=slices_by_role,
        preprocessing_log=log,
        provenance={"source": str(args.input), "language": "unspecified"},
    )
    corpus_mod.save_corpus(slices_by_role, manifest, args.out)
    print(f"ingested {stats.yielded} records ({stats.malformed} malformed) into {args.out}")
    return 0


def cmd_tokenize(args) -> int:
    slices_by_role, _ = corpus_mod.load_corpus(args.corpus)
    texts = [d.text for sl in slices_by_role.get("adaptation", []) for d in sl.documents]
    vocab = train_vocabulary(texts, args.size)
    vocab.save(args.out)
    print(f"trained vocabulary of {vocab.size} subwords -> {args.out}")
    return 0


def _load_slices(path: Path) -> dict:
    path = Path(path)
    return {p.stem: corpus_mod.load_slice(p) for p in sorted(path.glob("*.jsonl"))}


def cmd_adapt(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    train = TrainConfig(seed=args.seed, learning_rate=args.learning_rate)
    if args.base:
        base = Checkpoint.load(args.base)
    else:
        config = ModelConfig(vocab_size=vocab.size)
        base = init_model(config, args.seed)
    slices = list(_load_slices(args.slices).values())
    ckpt = adapt(base, slices, vocab, train)
    ckpt.save(args.out)
    print(f"adapted checkpoint ({ckpt.provenance['strategy']}) -> {args.out}")
    return 0


def cmd_finetune(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    train = TrainConfig(seed=args.seed, learning_rate=args.learning_rate)
    base = Checkpoint.load(args.base)
    docs = [d for sl in _load_slices(args.slices).values() for d in sl.documents]
    labels = sorted({d.source_label for d in docs if d.source_label is not None})
    base.config.n_classes = max(base.config.n_classes, len(labels))
    ckpt = finetune(base, docs, vocab, train)
    ckpt.save(args.out)
    print(f"fine-tuned checkpoint ({ckpt.provenance['finetune_strategy']}) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    ckpt = Checkpoint.load(args.model)
    model = init_from(ckpt)
    test_slice = corpus_mod.load_slice(args.test)
    if args.metric == "ppl":
        records = per_token_losses(model, test_slice, vocab, masking_seed=args.masking_seed)
        value = pseudo_perplexity([r.loss for r in records])
        result = {"metric": "pseudo_perplexity", "value": value, "n_masked": len(records)}
    else:
        label_index = {lab: i for i, lab in enumerate(sorted(test_slice.labels()))}
        preds, _ = predict(model, test_slice.documents, vocab)
        golds = [label_index[d.source_label] for d in test_slice.documents]
        value = macro_f1(preds, golds, len(label_index))
        result = {"metric": "macro_f1", "value": value, "n_docs": len(test_slice)}
    print(json.dumps(result, sort_keys=True))
    return 0


def cmd_matrix(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    models = {
        p.name: Checkpoint.load(p)
        for p in sorted(Path(args.models).iterdir())
        if (p / "hash.txt").exists()
    }
    tests = _load_slices(args.tests)
    control = Checkpoint.load(args.control)

    if args.metric == "ppl":
        def evaluate(ckpt, sl):
            records = per_token_losses(init_from(ckpt), sl, vocab, masking_seed=args.masking_seed)
            return pseudo_perplexity([r.loss for r in records])
        metric = "pseudo_perplexity"
    else:
        all_labels = sorted({lab for sl in tests.values() for lab in sl.labels()})
        label_index = {lab: i for i, lab in enumerate(all_labels)}

        def evaluate(ckpt, sl):
            preds, _ = predict(init_from(ckpt), sl.documents, vocab)
            golds = [label_index[d.source_label] for d in sl.documents]
            return macro_f1(preds, golds, len(label_index))
        metric = "macro_f1"

    matrix = build_matrix(models, tests, evaluate, control, metric=metric)
    report(matrix, args.out, percent=True)
    print(f"wrote {metric} matrix ({len(matrix.row_periods)}x{len(matrix.col_periods)}) to {args.out}")
    return 0


def cmd_diagnose(args) -> int:
    vocab = Vocabulary.load(args.vocab)
    control_model = init_from(Checkpoint.load(args.control))
    candidate_model = init_from(Checkpoint.load(args.candidate))
    corpus = SyntheticCorpus.load(args.tests)
    test_slices = {sl.period_id: sl for sl in corpus.slices_by_role["test"]}
    doc_texts = {d.id: d.text for sl in test_slices.values() for d in sl.documents}

    records = []
    for pid, sl in test_slices.items():
        ctl = per_token_losses(control_model, sl, vocab, masking_seed=args.masking_seed)
        cand = per_token_losses(candidate_model, sl, vocab, masking_seed=args.masking_seed)
        records.extend(
            diag_mod.loss_deltas(ctl, cand, pid, corpus.gold_tags, doc_texts, vocab)
        )

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    diag_mod.save_records_csv(records, out / "token_records.csv")
    with (out / "pos_contributions.csv").open("w") as fh:
        fh.write("pos,contribution_share,frequency_share\n")
        for c in diag_mod.contribution_by_pos(records):
            fh.write(f"{c.pos},{c.contribution_share!r},{c.frequency_share!r}\n")
    propn = [r for r in records if r.pos == "PROPN"]
    if len(propn) >= 10:
        with (out / "propn_deciles.csv").open("w") as fh:
            fh.write("decile,share\n")
            for i, share in enumerate(diag_mod.decile_contributions(propn), start=1):
                fh.write(f"{i},{share!r}\n")
    with (out / "top_tokens.csv").open("w") as fh:
        fh.write("subword,period,delta,word\n")
        for r in diag_mod.top_improved_tokens(records, args.top_k):
            fh.write(f"{r.subword},{r.period},{r.delta!r},{r.word}\n")
    if propn:
        top = diag_mod.top_fraction(propn, 0.1)
        rows = diag_mod.distinctiveness_table(top, test_slices, corpus.gold_tags, vocab)
        with (out / "distinctiveness.csv").open("w") as fh:
            fh.write("classes,subwords,comments,avg_frequency\n")
            for row in rows:
                fh.write(
                    f"{row.class_bucket},{row.n_subwords},{row.n_comments},{row.avg_frequency!r}\n"
                )
    print(f"wrote diagnostics over {len(records)} masked-token records to {out}")
    return 0


def cmd_sweep(args) -> int:
    plan = ExperimentPlan.from_yaml(args.plan)
    if args.out:
        plan.out_dir = args.out
    runner = ExperimentRunner(plan)
    grids = [
        runner.scale_sweep(plan.adaptation_sizes, plan.finetune_sizes, seed)
        for seed in plan.seeds
    ]
    grid = np.median(np.stack(grids), axis=0)
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "scale_sweep.csv").open("w") as fh:
        fh.write("adaptation_size," + ",".join(str(s) for s in plan.finetune_sizes) + "\n")
        for a_size, row in zip(plan.adaptation_sizes, grid):
            fh.write(str(a_size) + "," + ",".join(repr(float(v)) for v in row) + "\n")
    print(f"wrote scale sweep grid to {out / 'scale_sweep.csv'}")
    return 0


def cmd_compare(args) -> int:
    plan = ExperimentPlan.from_yaml(args.plan)
    if args.out:
        plan.out_dir = args.out
    runner = ExperimentRunner(plan)
    results = median_over_seeds([runner.strategy_compare(seed) for seed in plan.seeds])
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "strategy_compare.csv").open("w") as fh:
        fh.write("configuration,macro_f1_median\n")
        for name in sorted(results):
            fh.write(f"{name},{results[name]!r}\n")
    for name in sorted(results):
        print(f"{name}: {results[name]:.2f}")
    return 0


def cmd_report(args) -> int:
    matrix = CrossTemporalMatrix.load(args.matrix)
    path = report(matrix, args.out, percent=not args.raw)
    print(f"wrote report to {path}")
    return 0


def cmd_run(args) -> int:
    plan = ExperimentPlan.from_yaml(args.plan)
    if args.out:
        plan.out_dir = args.out
    runner = ExperimentRunner(plan)
    record = runner.run()
    print(f"plan {record.plan_hash[:12]} done in {record.wall_clock_seconds:.1f}s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tempadapt")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic temporal corpus")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="ingest newline-delimited records into a corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--field-map", required=True, dest="field_map")
    p.add_argument("--filters", default="")
    p.add_argument("--granularity", default="month")
    p.add_argument("--split-role", default="adaptation", dest="split_role")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("tokenize", help="train a subword vocabulary from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--size", type=int, default=2000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tokenize)

    p = sub.add_parser("adapt", help="continue pre-training on MLM")
    p.add_argument("--slices", required=True, help="directory of period .jsonl files")
    p.add_argument("--vocab", required=True)
    p.add_argument("--base", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--learning-rate", type=float, default=1e-3, dest="learning_rate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("finetune", help="fine-tune the classification head")
    p.add_argument("--slices", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--base", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--learning-rate", type=float, default=1e-3, dest="learning_rate")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one test slice")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metric", choices=("ppl", "f1"), default="ppl")
    p.add_argument("--masking-seed", type=int, default=12345, dest="masking_seed")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", help="cross-temporal evaluation matrix")
    p.add_argument("--models", required=True, help="directory of per-period checkpoints")
    p.add_argument("--tests", required=True, help="directory of per-period .jsonl test slices")
    p.add_argument("--metric", choices=("ppl", "f1"), required=True)
    p.add_argument("--control", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--masking-seed", type=int, default=12345, dest="masking_seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("diagnose", help="token-level loss attribution")
    p.add_argument("--control", required=True)
    p.add_argument("--candidate", required=True)
    p.add_argument("--tests", required=True, help="synthetic corpus directory with gold tags")
    p.add_argument("--vocab", required=True)
    p.add_argument("--masking-seed", type=int, default=12345, dest="masking_seed")
    p.add_argument("--top-k", type=int, default=10, dest="top_k")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="adaptation x fine-tuning scale grid")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="six-way strategy comparison")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="re-render CSV + heatmap for a saved matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--raw", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="execute a full experiment plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return 3
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
