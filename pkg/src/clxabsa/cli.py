"""Command-line entry points.

Every command writes into one run directory holding ``manifest.json`` plus
its outputs. Exit codes: 0 success, 1 usage or validation error, 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import __version__
from .analysis import calinski_harabasz, micro_f1, pca_2d, sentence_representations, write_pca_csv
from .corpus import (
    CorpusError,
    Dataset,
    DatasetRole,
    Direction,
    build_code_switched,
    load_alignments,
    load_corpus,
    merge,
    pair_datasets,
    read_sentences,
    save_corpus,
)
from .distillation import (
    DistillationError,
    TeacherEnsemble,
    check_tag_maps,
    parse_weights,
    run_distillation,
    save_soft_labels,
)
from .model import CheckpointError, build_toy_tagger, load_checkpoint, save_checkpoint
from .synthetic import make_bilingual_corpus
from .tagging import decode_tags
from .trainer import TrainConfig, TrainingError, evaluate, mean_and_std, train, train_multilingual

logger = logging.getLogger("clxabsa")

OUTPUT_ROOT_ENV = "CLXABSA_OUTPUT_ROOT"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise UsageError(f"no such file: {p}")


def run_dir(args, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
        key = json.dumps({k: v for k, v in sorted(vars(args).items()) if k not in ("func", "argv")}, default=str)
        out = root / f"{command}-{hashlib.sha256(key.encode()).hexdigest()[:10]}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, argv, inputs, outputs, started: str, seeds=(),
                   config_path=None, config=None) -> None:
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "config_path": str(config_path) if config_path else None,
        "config_hash": config.hash() if config is not None else None,
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "seeds": list(seeds),
        "outputs": sorted(str(p) for p in outputs),
        "started": started,
        "finished": _now(),
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _train_config(args) -> TrainConfig:
    base = TrainConfig.from_json(args.config).to_dict() if args.config else TrainConfig().to_dict()
    overrides = {
        "level": args.level, "batch_size": args.batch_size, "max_steps": args.max_steps,
        "learning_rate": args.lr, "alpha": args.alpha, "temperature": args.tau,
        "eval_interval": args.eval_interval, "selection_window": args.selection_window,
        "seed": args.seed,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(base)


def cmd_make_synthetic(args) -> int:
    started = _now()
    out = run_dir(args, "make-synthetic")
    corpus = make_bilingual_corpus(args.n_train, args.n_dev, args.n_test, args.n_unlabeled, args.seed,
                                   args.source_language, args.target_language)
    paths = corpus.write(out)
    for name, ds in corpus.files().items():
        logger.info("%s: %d sentences", name, len(ds))
    write_manifest(out, "make-synthetic", args.argv, [], paths.values(), started, [args.seed])
    return EXIT_OK


def cmd_build_codeswitch(args) -> int:
    _require_files(args.source, args.translated, args.alignments)
    started = _now()
    out = run_dir(args, "build-codeswitch")
    source = load_corpus(args.source, DatasetRole.SOURCE)
    target = load_corpus(args.translated, DatasetRole.TRANSLATED)
    pairs = pair_datasets(source, target, load_alignments(args.alignments))
    directions = [Direction.S_T, Direction.T_S] if args.direction == "both" else [Direction(args.direction)]
    outputs, report = [], {"pairs": len(pairs), "source_sentences": len(source)}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for d in directions:
            ds, skipped = build_code_switched(pairs, d, return_skipped=True)
            path = out / f"code_switched_{d.value[0]}{d.value[2]}.jsonl"
            save_corpus(ds, path)
            outputs.append(path)
            report[d.value] = {"written": len(ds), "skipped": len(skipped), "skipped_ids": skipped}
            logger.info("%s: wrote %d sentences, skipped %d pairs", d.value, len(ds), len(skipped))
    _write_json(out / "skip_report.json", report)
    outputs.append(out / "skip_report.json")
    write_manifest(out, "build-codeswitch", args.argv, [args.source, args.translated, args.alignments],
                   outputs, started)
    return EXIT_OK


def _load_labeled(paths):
    return [load_corpus(p, DatasetRole.SOURCE) for p in paths]


def _split_by_language(datasets) -> dict:
    by_lang = {}
    for ds in datasets:
        for lang in ds.languages:
            part = [s for s in ds if s.language == lang]
            by_lang.setdefault(lang, []).append(Dataset(part, ds.role, ds.language_pair))
    return by_lang


def cmd_train(args) -> int:
    _require_files(*args.train, args.dev, *(args.test or []), *(args.vocab_from or []), args.config)
    if args.seeds < 1:
        raise UsageError("--seeds must be at least 1")
    started = _now()
    base = _train_config(args)
    out = run_dir(args, "train")
    train_sets = _load_labeled(args.train)
    dev = load_corpus(args.dev, DatasetRole.SOURCE)
    tests = {p: load_corpus(p, DatasetRole.SOURCE) for p in (args.test or [])}
    vocab = [s.tokens for ds in train_sets for s in ds] + [s.tokens for s in dev]
    for p in args.vocab_from or []:
        vocab += [s.tokens for s in read_sentences(p)]
    seeds = [base.seed + i for i in range(args.seeds)]
    outputs, per_seed = [], []
    for seed in seeds:
        cfg = dataclasses.replace(base, seed=seed)
        seed_dir = out / f"seed-{seed}"
        seed_dir.mkdir(exist_ok=True)
        model = build_toy_tagger(vocab, args.hidden_dim, args.embedding_dim, seed)
        if args.multilingual:
            model, log = train_multilingual(model, _split_by_language(train_sets), dev, cfg)
        else:
            model, log = train(model, merge(train_sets, seed), dev, cfg)
        save_checkpoint(model, seed_dir / "model.safetensors", extra={"train_config": cfg.to_dict()})
        log.write(seed_dir / "runlog.jsonl")
        _write_json(seed_dir / "config.json", cfg.to_dict())
        row = {"seed": seed, "selected_step": log.selected["step"], "dev_f1": log.selected["dev_f1"]}
        for p, ds in tests.items():
            row[f"test:{Path(p).name}"] = evaluate(model, ds).micro_f1
        per_seed.append(row)
        outputs += [seed_dir / "model.safetensors", seed_dir / "runlog.jsonl", seed_dir / "config.json"]
        logger.info("seed %d: dev F1 %.4f", seed, row["dev_f1"])
    summary = {}
    for key in per_seed[0]:
        if key == "dev_f1" or key.startswith("test:"):
            mean, std = mean_and_std([r[key] for r in per_seed])
            summary[key] = {"mean": mean, "std": std}
    _write_json(out / "report.json", {"runs": per_seed, "mean": summary})
    outputs.append(out / "report.json")
    print(json.dumps(summary, sort_keys=True))
    write_manifest(out, "train", args.argv, [*args.train, args.dev, *tests, *(args.vocab_from or [])],
                   outputs, started, seeds, args.config, base)
    return EXIT_OK


def cmd_distill(args) -> int:
    _require_files(*args.teacher, args.student_init, args.unlabeled, args.dev, args.config,
                   *(args.test or []))
    if len(args.teacher) != args.num_teachers:
        raise UsageError(f"expected {args.num_teachers} teachers, got {len(args.teacher)} "
                         "(set --num-teachers to change)")
    weights = parse_weights(args.weights) if args.weights else [1.0 / args.num_teachers] * args.num_teachers
    started = _now()
    check_tag_maps([*args.teacher, args.student_init])
    base = _train_config(args)
    out = run_dir(args, "distill")
    pool = load_corpus(args.unlabeled, DatasetRole.UNLABELED)
    dev = load_corpus(args.dev, DatasetRole.SOURCE)
    ensemble = TeacherEnsemble([load_checkpoint(p) for p in args.teacher], weights,
                               descriptors=list(args.teacher))
    student = load_checkpoint(args.student_init)
    student, soft, log = run_distillation(ensemble, pool, student, dev, base)
    save_soft_labels(soft, out / "soft_labels.jsonl")
    save_checkpoint(student, out / "student.safetensors", extra={"train_config": base.to_dict()})
    log.write(out / "runlog.jsonl")
    _write_json(out / "config.json", base.to_dict())
    report = {"selected_step": log.selected["step"], "dev_f1": log.selected["dev_f1"], "weights": weights}
    for p in args.test or []:
        report[f"test:{Path(p).name}"] = evaluate(student, load_corpus(p, DatasetRole.SOURCE)).micro_f1
    _write_json(out / "report.json", report)
    print(json.dumps(report, sort_keys=True))
    outputs = [out / n for n in ("soft_labels.jsonl", "soft_labels.jsonl.meta.json", "student.safetensors",
                                 "runlog.jsonl", "config.json", "report.json")]
    write_manifest(out, "distill", args.argv, [*args.teacher, args.student_init, args.unlabeled, args.dev],
                   outputs, started, [base.seed], args.config, base)
    return EXIT_OK


def _read_predictions(path) -> list:
    sents = read_sentences(path)
    for s in sents:
        if s.tags is None:
            raise UsageError(f"{path}: prediction for {s.id!r} has no tags")
    return sents


def cmd_evaluate(args) -> int:
    _require_files(args.test, args.checkpoint, args.predictions)
    if (args.checkpoint is None) == (args.predictions is None):
        raise UsageError("give exactly one of --checkpoint or --predictions")
    started = _now()
    out = run_dir(args, "evaluate")
    test = load_corpus(args.test, DatasetRole.SOURCE)
    if len(test) == 0:
        raise UsageError("test set is empty")
    if args.checkpoint:
        report = evaluate(load_checkpoint(args.checkpoint), test)
        inputs = [args.checkpoint, args.test]
    else:
        preds = _read_predictions(args.predictions)
        report = micro_f1([(s.id, decode_tags(s.tags)) for s in preds],
                          [(s.id, s.spans) for s in test],
                          {s.id: s.language for s in test})
        inputs = [args.predictions, args.test]
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(json.dumps({"micro_f1": report.micro_f1, "precision": report.precision, "recall": report.recall}))
    write_manifest(out, "evaluate", args.argv, inputs, [out / "report.json"], started)
    return EXIT_OK


def cmd_analyze_space(args) -> int:
    _require_files(args.checkpoint, *args.data, args.language_map)
    started = _now()
    out = run_dir(args, "analyze-space")
    sentences = [s for p in args.data for s in read_sentences(p)]
    ids = [s.id for s in sentences]
    if len(set(ids)) != len(ids):
        raise UsageError("sentence ids are not unique across --data files")
    clusters = None
    if args.language_map:
        with open(args.language_map, encoding="utf-8") as fh:
            clusters = json.load(fh)
        missing = [i for i in ids if i not in clusters]
        if missing:
            raise UsageError(f"language map lacks ids, e.g. {missing[0]!r}")
    model = load_checkpoint(args.checkpoint)
    samples = sentence_representations(model, sentences)
    points = pca_2d(samples)
    write_pca_csv(points, out / "pca.csv")
    ch = calinski_harabasz(samples, clusters)
    record = {"event": "calinski_harabasz", "checkpoint": str(args.checkpoint), "value": ch.value,
              "degenerate": ch.degenerate, "n": len(samples)}
    with open(out / "metrics.jsonl", "a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(json.dumps(record, sort_keys=True))
    write_manifest(out, "analyze-space", args.argv, [args.checkpoint, *args.data], [out / "pca.csv",
                   out / "metrics.jsonl"], started)
    return EXIT_OK


def _replace_out(argv, out) -> list:
    argv = list(argv)
    for i, a in enumerate(argv):
        if a == "--out":
            del argv[i : i + 2]
            break
        if a.startswith("--out="):
            del argv[i]
            break
    return argv + ["--out", str(out)]


def cmd_rerun(args) -> int:
    _require_files(args.manifest)
    with open(args.manifest, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("command") == "rerun" or "argv" not in manifest:
        raise UsageError(f"{args.manifest} is not a replayable manifest")
    for path, digest in manifest["inputs"].items():
        if not Path(path).is_file():
            raise UsageError(f"input {path} is missing")
        if file_sha256(path) != digest:
            raise UsageError(f"input {path} changed since the original run")
    if args.out is None:
        raise UsageError("rerun needs --out")
    return main(_replace_out(manifest["argv"], args.out))


def _add_train_flags(p, steps_default_note: str) -> None:
    p.add_argument("--config", help="JSON file with TrainConfig fields")
    p.add_argument("--level", choices=["token", "sentiment", "none"])
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-steps", type=int, help=steps_default_note)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--selection-window", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"run directory (default: ${OUTPUT_ROOT_ENV}/<command>-<hash>)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="clxabsa", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("make-synthetic", help="write the templated bilingual corpus")
    p.add_argument("--n-train", type=int, default=400)
    p.add_argument("--n-dev", type=int, default=100)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--n-unlabeled", type=int, default=400)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--source-language", default="en")
    p.add_argument("--target-language", default="xx")
    p.add_argument("--out")
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("build-codeswitch", help="build code-switched datasets from aligned pairs")
    p.add_argument("--source", required=True)
    p.add_argument("--translated", required=True)
    p.add_argument("--alignments", required=True)
    p.add_argument("--direction", choices=["s2t", "t2s", "both"], default="both")
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_codeswitch)

    p = sub.add_parser("train", help="train a tagger (optionally with a contrastive term)")
    p.add_argument("--train", action="append", required=True, help="labeled JSONL; repeatable")
    p.add_argument("--dev", required=True, help="labeled dev JSONL used for model selection")
    p.add_argument("--test", action="append", help="labeled JSONL to score after training; repeatable")
    p.add_argument("--vocab-from", action="append", help="extra JSONL whose tokens join the vocabulary")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run")
    p.add_argument("--multilingual", action="store_true", help="group --train files by language")
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--embedding-dim", type=int, default=32)
    _add_train_flags(p, "default 2000")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distill", help="multi-teacher distillation on unlabeled data")
    p.add_argument("--teacher", action="append", required=True, help="teacher checkpoint; repeatable")
    p.add_argument("--num-teachers", type=int, default=3)
    p.add_argument("--weights", help="comma-separated teacher weights, fractions allowed (default uniform)")
    p.add_argument("--student-init", required=True, help="checkpoint the student starts from")
    p.add_argument("--unlabeled", required=True, help="JSONL pool; tags, if present, are ignored")
    p.add_argument("--dev", required=True)
    p.add_argument("--test", action="append")
    _add_train_flags(p, "student steps, e.g. 1000")
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("evaluate", help="span Micro-F1 of a checkpoint or a predictions file")
    p.add_argument("--test", required=True)
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="JSONL with predicted tags, same ids as --test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze-space", help="PCA coordinates and Calinski-Harabasz by language")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", action="append", required=True, help="JSONL sentences; repeatable")
    p.add_argument("--language-map", help="JSON {id: cluster} overriding record languages")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze_space)

    p = sub.add_parser("rerun", help="replay a run from its manifest into a new directory")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, CorpusError, CheckpointError, DistillationError) as exc:
        print(f"clxabsa {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"clxabsa {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, RuntimeError, OSError) as exc:
        print(f"clxabsa {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
