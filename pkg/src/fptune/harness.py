"""Experiment harness: dataset files, k-shot sampling, the 4-samples-by-
4-repeats accuracy protocol, ablation drivers, model-directory persistence,
and a synthetic ordinal corpus generator for desk-scale experiments."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import DEFAULT_TEMPLATES, EncoderConfig, Template
from .exceptions import ConfigError, DatasetFileError, SamplingError
from .feature_prompt import MultiHeadMLP
from .tensor import ParamStore, seeded_rng
from .text import Document, FeatureSchema, FeatureVector, Vocab, raw_feature_row
from .trainer import (
    FeatureSource,
    ModelBundle,
    TrainConfig,
    TrainLog,
    build_bundle,
    evaluate_accuracy,
    train,
)


@dataclass
class Dataset:
    documents: list[Document]
    n_classes: int
    name: str = ""

    def __post_init__(self) -> None:
        seen = set()
        for doc in self.documents:
            if doc.label >= self.n_classes:
                raise DatasetFileError(
                    f"document {doc.id!r} has label {doc.label} >= n_classes {self.n_classes}"
                )
            seen.add(doc.label)
        missing = set(range(self.n_classes)) - seen
        if missing:
            raise DatasetFileError(f"dataset {self.name!r} has no documents for classes {sorted(missing)}")

    def by_class(self) -> list[list[Document]]:
        groups: list[list[Document]] = [[] for _ in range(self.n_classes)]
        for doc in self.documents:
            groups[doc.label].append(doc)
        return groups


def load_dataset_jsonl(path, name: str | None = None) -> Dataset:
    """One JSON object per line with string "id", string "text", int "label"."""
    documents = []
    max_label = -1
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFileError(f"{path}:{lineno}: invalid JSON ({exc})") from None
        try:
            doc_id, text, label = record["id"], record["text"], record["label"]
        except (KeyError, TypeError):
            raise DatasetFileError(f"{path}:{lineno}: record needs id, text, label") from None
        if not isinstance(doc_id, str) or not isinstance(text, str) or not isinstance(label, int):
            raise DatasetFileError(f"{path}:{lineno}: id/text must be strings and label an integer")
        documents.append(Document(id=doc_id, raw_text=text, label=label))
        max_label = max(max_label, label)
    if not documents:
        raise DatasetFileError(f"{path}: no documents")
    return Dataset(documents=documents, n_classes=max_label + 1, name=name or Path(path).stem)


def write_dataset_jsonl(path, dataset: Dataset) -> None:
    lines = [
        json.dumps({"id": d.id, "text": d.raw_text, "label": d.label}, ensure_ascii=False)
        for d in dataset.documents
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_feature_csv(path, ids: Sequence[str], vectors: Sequence[np.ndarray], names: Sequence[str]) -> None:
    rows = ["id," + ",".join(names)]
    for doc_id, vec in zip(ids, vectors):
        rows.append(doc_id + "," + ",".join(f"{v:.17g}" for v in vec))
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


@dataclass
class FewShotSplit:
    """k training and k development documents per class, plus the full test set."""

    k: int
    train: list[Document]
    dev: list[Document]
    test: list[Document]
    sample_seed: int

    def __post_init__(self) -> None:
        train_ids = {d.id for d in self.train}
        if train_ids & {d.id for d in self.dev}:
            raise SamplingError("train and dev splits overlap")


def sample_few_shot(dataset: Dataset, k: int, seed: int, test_docs: Sequence[Document] = ()) -> FewShotSplit:
    """Uniform without-replacement per-class sampling: k for train, k more for
    dev, both drawn through the named seeded generator."""
    rng = seeded_rng(seed, "few-shot")
    train: list[Document] = []
    dev: list[Document] = []
    for label, group in enumerate(dataset.by_class()):
        if len(group) < 2 * k:
            raise SamplingError(
                f"class {label} has {len(group)} documents; needs {2 * k} (short by {2 * k - len(group)})"
            )
        order = rng.permutation(len(group))
        train.extend(group[i] for i in order[:k])
        dev.extend(group[i] for i in order[k : 2 * k])
    return FewShotSplit(k=k, train=train, dev=dev, test=list(test_docs), sample_seed=seed)


def accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """Exact-match fraction."""
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if not labels:
        raise ValueError("accuracy of empty sequences is undefined")
    return sum(1 for p, l in zip(predictions, labels) if p == l) / len(labels)


def format_cell(mean: float, std: float) -> str:
    """Accuracy cell in percent: mean(std), two decimals each."""
    return f"{100.0 * mean:.2f}({100.0 * std:.2f})"


# ---------------------------------------------------------------------------
# protocol runner


@dataclass
class RunMatrix:
    """Per k, the accuracies of the n_samples x n_repeats protocol runs."""

    mode: str
    accuracies: dict[int, list[float]] = field(default_factory=dict)

    def mean(self, k: int) -> float:
        return float(np.mean(self.accuracies[k]))

    def std(self, k: int) -> float:
        return float(np.std(self.accuracies[k]))

    def cell(self, k: int) -> str:
        return format_cell(self.mean(k), self.std(k))

    def lines(self) -> list[str]:
        out = ["k,n_runs,accuracy_mean,accuracy_std,cell"]
        for k in sorted(self.accuracies):
            out.append(
                f"{k},{len(self.accuracies[k])},{self.mean(k):.10g},{self.std(k):.10g},{self.cell(k)}"
            )
        return out


FeatureBuilder = Callable[[Sequence[Document]], FeatureSource]


@dataclass
class ExperimentPlan:
    """Everything the protocol needs beyond the data itself."""

    mode: str
    train_config: TrainConfig
    templates: Sequence[Template] = tuple(Template(text=t) for t in DEFAULT_TEMPLATES)
    template_mode: str = "fixed"  # fixed | average | best_dev
    template_index: int = 0
    feature_builder: FeatureBuilder | None = None
    randomize_features_seed: int | None = None
    encoder_kwargs: dict = field(default_factory=dict)
    n_samples: int = 4
    n_repeats: int = 4

    def __post_init__(self) -> None:
        if self.template_mode not in ("fixed", "average", "best_dev"):
            raise ConfigError(f"unknown template_mode {self.template_mode!r}")


def _run_once(
    plan: ExperimentPlan,
    dataset: Dataset,
    split: FewShotSplit,
    template: Template | None,
    run_seed: int,
) -> tuple[float, float]:
    """Train one model; returns (dev accuracy of best checkpoint, test accuracy)."""
    features = None
    if plan.mode == "fpt":
        if plan.feature_builder is None:
            raise ConfigError("fpt runs need a feature builder")
        features = plan.feature_builder(split.train)
        if plan.randomize_features_seed is not None:
            all_ids = [d.id for d in split.train + split.dev + split.test]
            features = features.randomized(all_ids, plan.randomize_features_seed)
    bundle = build_bundle(
        plan.mode,
        dataset.n_classes,
        split.train,
        split.dev,
        seed=run_seed,
        template=template,
        features=features,
        **plan.encoder_kwargs,
    )
    config = replace(plan.train_config, seed=run_seed, mode=plan.mode)
    best, log = train(bundle, split.train, split.dev, config)
    bundle.store.load_snapshot(best)
    best_dev = max((e.dev_acc for e in log.entries), default=0.0)
    return best_dev, evaluate_accuracy(bundle, split.test)


def _protocol_accuracy(plan: ExperimentPlan, dataset: Dataset, split: FewShotSplit, run_seed: int) -> float:
    needs_template = plan.mode in ("hp", "hbp", "fpt")
    if not needs_template:
        return _run_once(plan, dataset, split, None, run_seed)[1]
    if plan.template_mode == "fixed":
        template = plan.templates[plan.template_index]
        return _run_once(plan, dataset, split, template, run_seed)[1]
    results = [_run_once(plan, dataset, split, t, run_seed) for t in plan.templates]
    if plan.template_mode == "average":
        return float(np.mean([test for _, test in results]))
    best_index = int(np.argmax([dev for dev, _ in results]))
    return results[best_index][1]


class RunMatrixAborted(ConfigError):
    """A protocol run failed; completed accuracies survive in `partial`."""

    def __init__(self, message: str, partial: RunMatrix):
        super().__init__(message)
        self.partial = partial


def run_matrix(
    dataset: Dataset,
    test_docs: Sequence[Document],
    k_list: Sequence[int],
    plan: ExperimentPlan,
    base_seed: int = 0,
) -> RunMatrix:
    """The full protocol: per k, n_samples sampled splits, each trained
    n_repeats times with distinct derived seeds; accuracies kept per run.
    A failed run aborts the matrix but the completed runs are preserved on
    the raised error."""
    matrix = RunMatrix(mode=plan.mode)
    for k in k_list:
        accs: list[float] = []
        matrix.accuracies[k] = accs
        for s in range(plan.n_samples):
            try:
                split_seed = _derived(base_seed, f"k{k}/sample{s}")
                split = sample_few_shot(dataset, k, seed=split_seed, test_docs=test_docs)
            except Exception as exc:
                raise RunMatrixAborted(f"sampling k={k} sample={s} failed: {exc}", matrix) from exc
            for r in range(plan.n_repeats):
                run_seed = _derived(base_seed, f"k{k}/sample{s}/repeat{r}")
                try:
                    accs.append(_protocol_accuracy(plan, dataset, split, run_seed))
                except Exception as exc:
                    raise RunMatrixAborted(
                        f"run k={k} sample={s} repeat={r} failed: {exc}", matrix
                    ) from exc
    return matrix


def _derived(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}/{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


ABLATION_VARIANTS = ("fpt", "fpt_no_calibration", "hbp_pseudo_tokens", "fpt_random_features")


def ablation_suite(
    dataset: Dataset,
    test_docs: Sequence[Document],
    k_list: Sequence[int],
    plan: ExperimentPlan,
    base_seed: int = 0,
) -> dict[str, RunMatrix]:
    """Four arms: full model, calibration removed, hybrid prompt with pseudo
    tokens (feature prompts removed too), and feature vectors replaced by
    frozen per-document random vectors of matched dimension."""
    if plan.mode != "fpt":
        raise ConfigError("the ablation suite is defined relative to fpt")
    arms = {
        "fpt": plan,
        "fpt_no_calibration": replace(plan, train_config=replace(plan.train_config, calibration_enabled=False)),
        "hbp_pseudo_tokens": replace(plan, mode="hbp"),
        "fpt_random_features": replace(plan, randomize_features_seed=_derived(base_seed, "random-features")),
    }
    return {name: run_matrix(dataset, test_docs, k_list, arm, base_seed=base_seed) for name, arm in arms.items()}


# ---------------------------------------------------------------------------
# synthetic ordinal corpus

_EASY_WORDS = (
    "the cat sat on a mat and the dog ran to the sun we go up it is big "
    "red hat top pot pan cup day boy girl toy map car bus tree leaf fish"
).split()

_HARD_WORDS = (
    "extraordinary complexity university calculation nevertheless phenomenon "
    "hypothesis infrastructure approximately characteristic deliberately "
    "fundamental investigation laboratory mathematical"
).split()

SYNTH_FEATURE_NAMES = tuple(f"s{i}" for i in range(8))


def synth_dataset(
    n_classes: int,
    per_class: int,
    noise: float,
    seed: int,
    name: str = "synth",
) -> tuple[Dataset, list[FeatureVector]]:
    """Class-banded documents plus feature vectors with ordinal structure.

    Class c writes longer sentences with more polysyllabic words as c grows.
    Its feature vector sits at angle c / (n-1) * pi/2 on a unit arc (adjacent
    classes most similar, monotone decay with class distance) with gaussian
    perturbations scaled by `noise`; at noise 0 the raw similarity matrix is
    exactly monotone in class distance.
    """
    if n_classes < 2:
        raise ConfigError(f"synth_dataset needs n_classes >= 2, got {n_classes}")
    rng = seeded_rng(seed, f"synth/{name}")
    documents: list[Document] = []
    vectors: list[FeatureVector] = []
    denom = max(n_classes - 1, 1)
    for c in range(n_classes):
        level = c / denom
        theta = level * math.pi / 2.0
        base_len = 3 + int(round(2 * level))
        base_rate = 0.06 + 0.22 * level
        for i in range(per_class):
            n_sentences = int(rng.integers(2, 5))
            length = max(2, base_len + int(rng.integers(-1, 2)))
            rate = float(np.clip(base_rate + (1.0 + noise) * float(rng.normal(0.0, 0.06)), 0.0, 0.9))
            sentences = []
            for _ in range(n_sentences):
                words = [
                    _HARD_WORDS[int(rng.integers(len(_HARD_WORDS)))]
                    if rng.random() < rate
                    else _EASY_WORDS[int(rng.integers(len(_EASY_WORDS)))]
                    for _ in range(length)
                ]
                sentences.append(" ".join(words).capitalize() + ".")
            vec = np.zeros(len(SYNTH_FEATURE_NAMES))
            vec[0] = math.cos(theta)
            vec[1] = math.sin(theta)
            vec += noise * 0.18 * rng.standard_normal(vec.shape)
            documents.append(Document(id=f"{name}-{c}-{i}", raw_text=" ".join(sentences), label=c))
            vectors.append(FeatureVector(values=vec, feature_names=list(SYNTH_FEATURE_NAMES)))
    return Dataset(documents=documents, n_classes=n_classes, name=name), vectors


# ---------------------------------------------------------------------------
# model directories

CHECKPOINT_FILE = "checkpoint.fpt"
META_FILE = "meta.json"
TRAINLOG_FILE = "trainlog.csv"


def save_bundle(out_dir, bundle: ModelBundle, log: TrainLog | None = None) -> None:
    """Persist a trained model: tensor checkpoint, JSON metadata, train log."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out_dir / CHECKPOINT_FILE, bundle.store)
    meta = {
        "mode": bundle.mode,
        "encoder": asdict(bundle.config),
        "vocab": bundle.vocab.tokens,
        "template": bundle.template.text if bundle.template is not None else None,
    }
    if bundle.mode == "fpt":
        meta["mlp"] = {
            "alpha": bundle.mlp.alpha,
            "n_heads": bundle.mlp.n_heads,
            "d_model": bundle.mlp.d_model,
            "d_hidden": bundle.mlp.d_hidden,
        }
        schema = bundle.features.schema
        meta["feature_schema"] = {
            "feature_names": schema.feature_names,
            "sources": schema.sources,
            "mean": schema.mean.tolist(),
            "std": schema.std.tolist(),
        }
    (out_dir / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if log is not None:
        (out_dir / TRAINLOG_FILE).write_text("\n".join(log.lines()) + "\n", encoding="utf-8")


def load_bundle(model_dir, external_rows: Mapping[str, np.ndarray] | None = None) -> ModelBundle:
    """Rebuild a model directory; external feature rows are needed only when
    the stored schema has external columns."""
    model_dir = Path(model_dir)
    meta = json.loads((model_dir / META_FILE).read_text(encoding="utf-8"))
    tensors = load_checkpoint(model_dir / CHECKPOINT_FILE)
    store = ParamStore()
    for name in sorted(tensors):
        store.register(name, tensors[name])
    config = EncoderConfig(**meta["encoder"])
    vocab = Vocab(tokens=list(meta["vocab"]))
    template = Template(text=meta["template"]) if meta.get("template") else None
    mlp = None
    features = None
    if meta["mode"] == "fpt":
        mlp = MultiHeadMLP(**meta["mlp"])
        spec = meta["feature_schema"]
        schema = FeatureSchema(feature_names=list(spec["feature_names"]), sources=list(spec["sources"]))
        schema.mean = np.asarray(spec["mean"], dtype=np.float64)
        schema.std = np.asarray(spec["std"], dtype=np.float64)
        rows = external_rows

        def raw_fn(doc: Document) -> np.ndarray:
            row = rows.get(doc.id) if rows is not None else None
            return raw_feature_row(doc, schema, row)

        features = FeatureSource(schema, raw_fn)
    return ModelBundle(mode=meta["mode"], config=config, store=store, vocab=vocab,
                       template=template, mlp=mlp, features=features)


# ---------------------------------------------------------------------------
# config files


def _field_names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def load_config_file(path) -> tuple[dict, dict]:
    """JSON config whose keys mirror the train and encoder config field names
    exactly; returns (train_kwargs, encoder_kwargs)."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    train_keys = _field_names(TrainConfig)
    encoder_keys = _field_names(EncoderConfig) - {"vocab_size", "n_classes"}
    train_kwargs, encoder_kwargs = {}, {}
    for key, value in payload.items():
        if key in train_keys:
            train_kwargs[key] = value
        elif key in encoder_keys:
            encoder_kwargs[key] = value
        elif key in ("vocab_size", "n_classes"):
            raise ConfigError(f"{path}: {key} is derived from the dataset and cannot be configured")
        else:
            raise ConfigError(f"{path}: unknown config key {key!r}")
    return train_kwargs, encoder_kwargs
