"""Command-line entry points.

Subcommands: extract-features, train, evaluate, run-matrix, ablate,
dump-similarity, and synth (generates the synthetic ordinal corpus).  Every
failure exits nonzero with one machine-parsable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .calibration import ClassFeatureSet, similarity_grids, write_similarity_grids
from .encoder import DEFAULT_TEMPLATES, Template, load_templates
from .exceptions import ConfigError, FptError
from .harness import (
    ExperimentPlan,
    ablation_suite,
    load_bundle,
    load_config_file,
    load_dataset_jsonl,
    run_matrix,
    sample_few_shot,
    save_bundle,
    synth_dataset,
    write_dataset_jsonl,
    write_feature_csv,
)
from .text import builtin_features, parse_feature_file, tokenize, BUILTIN_FEATURE_NAMES
from .trainer import FeatureSource, TrainConfig, build_bundle, evaluate_accuracy, train


def _load_features_arg(path):
    if path is None:
        return None, None
    return parse_feature_file(path)


def _feature_builder(args, names, rows):
    """How fpt runs obtain their vectors: builtin features, builtin plus
    external columns, or the feature file alone (--features-only)."""
    if getattr(args, "features_only", False):
        if rows is None:
            raise ConfigError("--features-only requires --features")
        return lambda train_docs: FeatureSource.from_table(rows, train_docs, feature_names=names)
    if rows is not None:
        return lambda train_docs: FeatureSource.fit_builtin(train_docs, external=rows, external_names=names)
    return lambda train_docs: FeatureSource.fit_builtin(train_docs)


def _templates(args) -> list[Template]:
    if getattr(args, "templates", None):
        return load_templates(args.templates)
    return [Template(text=t) for t in DEFAULT_TEMPLATES]


def _template(args) -> Template:
    templates = _templates(args)
    if not 0 <= args.template_index < len(templates):
        raise ConfigError(f"template index {args.template_index} out of range for {len(templates)} templates")
    return templates[args.template_index]


def _configs(args) -> tuple[dict, dict]:
    if getattr(args, "config", None):
        return load_config_file(args.config)
    return {}, {}


def _k_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"invalid k list {text!r}; expected comma-separated integers") from None


def _write_or_print(lines: list[str], out: str | None) -> None:
    payload = "\n".join(lines) + "\n"
    if out:
        Path(out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)


# ---------------------------------------------------------------------------
# subcommand handlers


def cmd_extract_features(args) -> int:
    dataset = load_dataset_jsonl(args.dataset)
    ids = [d.id for d in dataset.documents]
    vectors = [builtin_features(tokenize(d.raw_text)) for d in dataset.documents]
    write_feature_csv(args.out, ids, vectors, BUILTIN_FEATURE_NAMES)
    print(f"wrote {len(ids)} rows x {len(BUILTIN_FEATURE_NAMES)} features to {args.out}")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pool, pool_vecs = synth_dataset(args.classes, args.per_class, args.noise, args.seed, name="synth")
    test, test_vecs = synth_dataset(args.classes, args.test_per_class, args.noise, args.seed + 1, name="synthtest")
    write_dataset_jsonl(out / "train.jsonl", pool)
    write_dataset_jsonl(out / "test.jsonl", test)
    ids = [d.id for d in pool.documents + test.documents]
    vectors = [v.values for v in pool_vecs + test_vecs]
    write_feature_csv(out / "features.csv", ids, vectors, pool_vecs[0].feature_names)
    print(f"wrote {len(pool.documents)} pool + {len(test.documents)} test documents to {out}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset_jsonl(args.dataset)
    test_docs = load_dataset_jsonl(args.test).documents if args.test else []
    names, rows = _load_features_arg(args.features)
    train_kwargs, encoder_kwargs = _configs(args)
    train_kwargs.update(mode=args.mode, seed=args.seed)
    config = TrainConfig(**train_kwargs)

    split = sample_few_shot(dataset, args.k, seed=args.seed, test_docs=test_docs)
    features = _feature_builder(args, names, rows)(split.train) if args.mode == "fpt" else None
    template = _template(args) if args.mode in ("hp", "hbp", "fpt") else None
    bundle = build_bundle(args.mode, dataset.n_classes, split.train, split.dev,
                          seed=args.seed, template=template, features=features, **encoder_kwargs)
    best, log = train(bundle, split.train, split.dev, config)
    bundle.store.load_snapshot(best)
    save_bundle(args.out, bundle, log)
    best_dev = max((e.dev_acc for e in log.entries), default=0.0)
    summary = f"mode={args.mode} k={args.k} seed={args.seed} best_dev={best_dev:.10g}"
    if test_docs:
        summary += f" test_acc={evaluate_accuracy(bundle, test_docs):.10g}"
    print(summary)
    return 0


def cmd_evaluate(args) -> int:
    names, rows = _load_features_arg(args.features)
    bundle = load_bundle(args.model, external_rows=rows)
    dataset = load_dataset_jsonl(args.dataset)
    print(f"{evaluate_accuracy(bundle, dataset.documents):.10g}")
    return 0


def _build_plan(args, mode, names, rows, config: TrainConfig, encoder_kwargs) -> ExperimentPlan:
    return ExperimentPlan(
        mode=mode,
        train_config=config,
        templates=_templates(args),
        template_mode=args.template_mode,
        template_index=args.template_index,
        feature_builder=_feature_builder(args, names, rows) if mode == "fpt" else None,
        encoder_kwargs=encoder_kwargs,
        n_samples=args.samples,
        n_repeats=args.repeats,
    )


def cmd_run_matrix(args) -> int:
    dataset = load_dataset_jsonl(args.dataset)
    test_docs = load_dataset_jsonl(args.test).documents
    names, rows = _load_features_arg(args.features)
    train_kwargs, encoder_kwargs = _configs(args)
    train_kwargs.update(mode=args.mode)
    plan = _build_plan(args, args.mode, names, rows, TrainConfig(**train_kwargs), encoder_kwargs)
    matrix = run_matrix(dataset, test_docs, _k_list(args.k_list), plan, base_seed=args.seed)
    _write_or_print(matrix.lines(), args.out)
    return 0


def cmd_ablate(args) -> int:
    dataset = load_dataset_jsonl(args.dataset)
    test_docs = load_dataset_jsonl(args.test).documents
    names, rows = _load_features_arg(args.features)
    train_kwargs, encoder_kwargs = _configs(args)
    train_kwargs.update(mode="fpt")
    plan = _build_plan(args, "fpt", names, rows, TrainConfig(**train_kwargs), encoder_kwargs)
    results = ablation_suite(dataset, test_docs, _k_list(args.k_list), plan, base_seed=args.seed)
    lines = ["variant,k,n_runs,accuracy_mean,accuracy_std,cell"]
    for variant, matrix in results.items():
        for k in sorted(matrix.accuracies):
            lines.append(
                f"{variant},{k},{len(matrix.accuracies[k])},"
                f"{matrix.mean(k):.10g},{matrix.std(k):.10g},{matrix.cell(k)}"
            )
    _write_or_print(lines, args.out)
    return 0


def cmd_dump_similarity(args) -> int:
    names, rows = _load_features_arg(args.features)
    bundle = load_bundle(args.model, external_rows=rows)
    if bundle.mode != "fpt":
        raise ConfigError("dump-similarity needs an fpt model")
    dataset = load_dataset_jsonl(args.dataset)
    groups: list[list[np.ndarray]] = [[] for _ in range(dataset.n_classes)]
    for doc in dataset.documents:
        groups[doc.label].append(bundle.features.vector(doc))
    grids = similarity_grids(ClassFeatureSet(raw=groups), bundle.mlp, bundle.store)
    paths = write_similarity_grids(grids, args.out)
    print(f"wrote {', '.join(p.name for p in paths)} to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fptune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-features", help="dataset JSONL -> builtin feature CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("synth", help="generate a synthetic ordinal corpus")
    p.add_argument("--classes", type=int, default=5)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--test-per-class", type=int, default=8)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    def common_train_args(p, with_mode=True):
        p.add_argument("--dataset", required=True)
        p.add_argument("--features", default=None)
        p.add_argument("--features-only", action="store_true",
                       help="use only the feature file columns (skip builtin extraction)")
        if with_mode:
            p.add_argument("--mode", choices=("ft", "hp", "sp", "hbp", "fpt"), default="fpt")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", default=None, help="JSON config mirroring the train/encoder fields")
        p.add_argument("--templates", default=None, help="template file, one [MASK] template per line")
        p.add_argument("--template-index", type=int, default=0)

    p = sub.add_parser("train", help="train one k-shot run and save the model directory")
    common_train_args(p)
    p.add_argument("--test", default=None)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="model directory + dataset -> accuracy")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--features", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-matrix", help="the n_samples x n_repeats protocol per k")
    common_train_args(p)
    p.add_argument("--test", required=True)
    p.add_argument("--k-list", required=True)
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--repeats", type=int, default=4)
    p.add_argument("--template-mode", choices=("fixed", "average", "best_dev"), default="fixed")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_run_matrix)

    p = sub.add_parser("ablate", help="fpt / no-calibration / pseudo-token / random-feature arms")
    common_train_args(p, with_mode=False)
    p.add_argument("--test", required=True)
    p.add_argument("--k-list", required=True)
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--repeats", type=int, default=4)
    p.add_argument("--template-mode", choices=("fixed", "average", "best_dev"), default="fixed")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-similarity", help="raw/embedded/difference similarity grids")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--features", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_similarity)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FptError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return 1
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
