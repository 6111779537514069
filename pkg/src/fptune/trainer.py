"""Optimization: AdamW with linear warmup, the alternating training procedure
(batched classification updates, then one whole-set calibration update of the
feature embedder per epoch), and the baseline training modes.

The calibration step touches multi-head-MLP parameters only; encoder,
verbalizer, and prompt embeddings are untouched by it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .calibration import ClassFeatureSet, calibration_loss
from .encoder import (
    EncoderConfig,
    PromptInput,
    Template,
    assemble,
    classification_loss,
    classify,
    init_cls_head,
    init_encoder_params,
    init_soft_prompt,
    init_verbalizer,
)
from .exceptions import ConfigError, TrainingError
from .feature_prompt import MultiHeadMLP
from .tensor import ParamStore, seeded_rng
from .text import Document, FeatureSchema, TokenizedDoc, Vocab, builtin_schema, raw_feature_row, tokenize

MODES = ("ft", "hp", "sp", "hbp", "fpt")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    warmup_ratio: float = 0.05
    calibration_learning_rate: float | None = None  # defaults to learning_rate
    seed: int = 0
    mode: str = "fpt"
    calibration_enabled: bool = True
    calibration_steps: int = 1

    def __post_init__(self) -> None:
        self.mode = self.mode.lower()
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.calibration_learning_rate is not None and self.calibration_learning_rate <= 0:
            raise ConfigError("calibration_learning_rate must be > 0")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ConfigError(f"warmup_ratio must be in [0, 1), got {self.warmup_ratio}")
        if self.calibration_steps < 1:
            raise ConfigError(f"calibration_steps must be >= 1, got {self.calibration_steps}")

    @property
    def effective_calibration_lr(self) -> float:
        return self.calibration_learning_rate if self.calibration_learning_rate is not None else self.learning_rate


def warmup_constant_lr(step: int, total_steps: int, peak: float, warmup_ratio: float) -> float:
    """Linear warmup over warmup_ratio of the total steps, then constant.
    Steps count from 1; at step == warmup_steps the rate reaches its peak."""
    warmup_steps = warmup_ratio * total_steps
    if warmup_steps <= 0.0:
        return peak
    return peak * min(1.0, step / warmup_steps)


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    steps: dict[str, int] = field(default_factory=dict)


def adamw_step(
    params: ParamStore,
    grads: Mapping[str, np.ndarray],
    state: AdamWState,
    lr_t: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> AdamWState:
    """One decoupled-weight-decay Adam update over the named gradients."""
    b1, b2 = betas
    for name in sorted(grads):
        g = np.asarray(grads[name], dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in tensor {name!r}")
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
            state.steps[name] = 0
        state.steps[name] += 1
        t = state.steps[name]
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1**t)
        v_hat = state.v[name] / (1.0 - b2**t)
        p.data = p.data - lr_t * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p.data)
    return state


class AdamW:
    """AdamW bound to a ParamStore; reads gradients off the tensors."""

    def __init__(self, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.state = AdamWState()

    def step(self, params: ParamStore, names: Sequence[str], lr_t: float) -> None:
        grads = {
            name: (params[name].grad if params[name].grad is not None else np.zeros_like(params[name].data))
            for name in names
        }
        adamw_step(params, grads, self.state, lr_t, self.betas, self.eps, self.weight_decay)


# ---------------------------------------------------------------------------
# feature sources


class FeatureSource:
    """Per-document normalized feature vectors under a train-fitted schema."""

    def __init__(self, schema: FeatureSchema, raw_fn: Callable[[Document], np.ndarray]):
        self.schema = schema
        self._raw_fn = raw_fn
        self._cache: dict[str, np.ndarray] = {}

    @property
    def alpha(self) -> int:
        return self.schema.alpha

    def vector(self, doc: Document) -> np.ndarray:
        if doc.id not in self._cache:
            self._cache[doc.id] = self.schema.normalize(self._raw_fn(doc))
        return self._cache[doc.id]

    @classmethod
    def fit_builtin(cls, train_docs: Sequence[Document], external: Mapping[str, np.ndarray] | None = None,
                    external_names: Sequence[str] | None = None, schema: FeatureSchema | None = None) -> "FeatureSource":
        """Builtin features, optionally concatenated with external columns;
        z-statistics fitted on the training documents only."""
        if schema is None:
            if external_names:
                from .text import combined_schema

                schema = combined_schema(external_names)
            else:
                schema = builtin_schema()

        def raw_fn(doc: Document) -> np.ndarray:
            row = external.get(doc.id) if external is not None else None
            return raw_feature_row(doc, schema, row)

        schema.fit([raw_fn(doc) for doc in train_docs])
        return cls(schema, raw_fn)

    @classmethod
    def from_table(cls, table: Mapping[str, np.ndarray], train_docs: Sequence[Document],
                   feature_names: Sequence[str] | None = None) -> "FeatureSource":
        """Vectors provided wholesale (synthetic corpora, external-only runs)."""
        width = len(next(iter(table.values())))
        names = list(feature_names) if feature_names else [f"f{i}" for i in range(width)]
        schema = FeatureSchema(feature_names=names, sources=["external"] * len(names))
        schema.fit([np.asarray(table[d.id], dtype=np.float64) for d in train_docs])
        return cls(schema, lambda doc: np.asarray(table[doc.id], dtype=np.float64))

    def randomized(self, doc_ids: Sequence[str], seed: int) -> "FeatureSource":
        """Matched-dimension random vectors, drawn once per document and
        frozen; the control arm for the feature-information ablation."""
        rng = seeded_rng(seed, "random-features")
        table = {doc_id: rng.standard_normal(self.alpha) for doc_id in sorted(doc_ids)}
        schema = FeatureSchema(feature_names=list(self.schema.feature_names), sources=list(self.schema.sources))
        schema.fit([table[d] for d in sorted(table)])
        return FeatureSource(schema, lambda doc: table[doc.id])


# ---------------------------------------------------------------------------
# model bundle


@dataclass
class ModelBundle:
    """Everything a mode needs to turn documents into logits."""

    mode: str
    config: EncoderConfig
    store: ParamStore
    vocab: Vocab
    template: Template | None = None
    mlp: MultiHeadMLP | None = None
    features: FeatureSource | None = None
    _tokenized: dict[str, TokenizedDoc] = field(default_factory=dict, repr=False)

    def tokenized(self, doc: Document) -> TokenizedDoc:
        if doc.id not in self._tokenized:
            self._tokenized[doc.id] = tokenize(doc.raw_text)
        tok = self._tokenized[doc.id]
        if tok.token_ids is None:
            tok.token_ids = self.vocab.encode(tok.tokens)
        return tok

    def make_prompt(self, doc: Document) -> PromptInput:
        tok = self.tokenized(doc)
        if self.mode == "ft":
            return assemble("ft", tok, self.store, self.config, self.vocab)
        if self.mode == "hp":
            return assemble("hp", tok, self.store, self.config, self.vocab, template=self.template)
        if self.mode in ("sp", "hbp"):
            template = self.template if self.mode == "hbp" else None
            return assemble(self.mode, tok, self.store, self.config, self.vocab,
                            template=template, soft=self.store["soft_prompt"])
        feature_vs = self.mlp.embed(self.features.vector(doc), self.store)
        return assemble("fpt", tok, self.store, self.config, self.vocab,
                        template=self.template, feature_vs=feature_vs)

    def predict(self, doc: Document) -> int:
        logits = classify(self.make_prompt(doc), self.store, self.config)
        return int(np.argmax(logits.data))

    def trainable_names(self) -> list[str]:
        groups = ["encoder"]
        if self.mode == "ft":
            groups.append("cls_head")
        else:
            groups.append("verbalizer")
        if self.mode in ("sp", "hbp"):
            groups.append("soft_prompt")
        if self.mode == "fpt":
            groups.append("mlp")
        names: list[str] = []
        for group in groups:
            names.extend(self.store.group(group))
        return names


def build_bundle(
    mode: str,
    n_classes: int,
    train_docs: Sequence[Document],
    dev_docs: Sequence[Document],
    seed: int,
    template: Template | None = None,
    features: FeatureSource | None = None,
    d_model: int = 64,
    n_layers: int = 2,
    n_heads: int = 4,
    d_ff: int = 128,
    max_seq_len: int = 128,
    l_soft_tokens: int = 4,
    dropout_rate: float = 0.0,
    d_hidden: int = 64,
) -> ModelBundle:
    """Initialize parameters and vocabulary for one training run.

    The vocabulary comes from the k-shot train and dev token streams plus the
    template tokens; there is no pretrained vocabulary to inherit.
    """
    mode = mode.lower()
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode in ("hp", "hbp", "fpt") and template is None:
        raise ConfigError(f"mode {mode!r} needs a template")
    if mode == "fpt" and features is None:
        raise ConfigError("fpt mode needs a feature source")

    tokenized = {doc.id: tokenize(doc.raw_text) for doc in list(train_docs) + list(dev_docs)}
    extra = template.word_tokens if template is not None else []
    vocab = Vocab.build((tok.tokens for tok in tokenized.values()), extra_tokens=extra)
    config = EncoderConfig(
        vocab_size=len(vocab), n_classes=n_classes, d_model=d_model, n_layers=n_layers,
        n_heads=n_heads, d_ff=d_ff, max_seq_len=max_seq_len, l_soft_tokens=l_soft_tokens,
        dropout_rate=dropout_rate,
    )
    store = ParamStore()
    rng = seeded_rng(seed, "init")
    init_encoder_params(store, config, rng)
    if mode == "ft":
        init_cls_head(store, config, rng)
    else:
        init_verbalizer(store, config, rng)
    if mode in ("sp", "hbp"):
        init_soft_prompt(store, config, rng)
    mlp = None
    if mode == "fpt":
        mlp = MultiHeadMLP(alpha=features.alpha, n_heads=config.l_soft_tokens,
                           d_model=config.d_model, d_hidden=d_hidden)
        mlp.init_params(store, rng)
    bundle = ModelBundle(mode=mode, config=config, store=store, vocab=vocab,
                         template=template, mlp=mlp, features=features)
    bundle._tokenized.update(tokenized)
    return bundle


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochLog:
    epoch: int
    cls_loss: float
    cal_loss: float | None
    dev_acc: float
    first_cls_step: int
    last_cls_step: int
    cal_step: int | None


@dataclass
class TrainLog:
    entries: list[EpochLog] = field(default_factory=list)
    best_epoch: int | None = None

    def lines(self) -> list[str]:
        out = ["epoch,cls_loss,cal_loss,dev_acc"]
        for e in self.entries:
            cal = f"{e.cal_loss:.10g}" if e.cal_loss is not None else ""
            out.append(f"{e.epoch},{e.cls_loss:.10g},{cal},{e.dev_acc:.10g}")
        return out


def evaluate_accuracy(bundle: ModelBundle, docs: Sequence[Document]) -> float:
    if not docs:
        return 0.0
    correct = sum(1 for doc in docs if bundle.predict(doc) == doc.label)
    return correct / len(docs)


def _check_finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {what}: {value!r}")
    return value


def train_epoch_classification(
    bundle: ModelBundle,
    train_docs: Sequence[Document],
    config: TrainConfig,
    optimizer: AdamW,
    shuffle_rng: np.random.Generator,
    dropout_rng: np.random.Generator,
    step_offset: int,
    total_steps: int,
) -> tuple[float, int]:
    """All classification batches of one epoch; returns (mean loss, steps)."""
    order = shuffle_rng.permutation(len(train_docs))
    names = bundle.trainable_names()
    losses = []
    step = step_offset
    for start in range(0, len(order), config.batch_size):
        batch_docs = [train_docs[i] for i in order[start : start + config.batch_size]]
        batch = [(bundle.make_prompt(doc), doc.label) for doc in batch_docs]
        bundle.store.zero_grad()
        loss = classification_loss(batch, bundle.store, bundle.config, train=True, dropout_rng=dropout_rng)
        losses.append(_check_finite(loss.item(), "classification loss"))
        loss.backward()
        step += 1
        lr_t = warmup_constant_lr(step, total_steps, config.learning_rate, config.warmup_ratio)
        optimizer.step(bundle.store, names, lr_t)
    return float(np.mean(losses)), step - step_offset


def train_epoch_calibration(
    bundle: ModelBundle,
    train_docs: Sequence[Document],
    config: TrainConfig,
    optimizer: AdamW,
) -> float | None:
    """One whole-set calibration update of the feature embedder."""
    present = sorted({doc.label for doc in train_docs})
    if len(present) < 2:
        warnings.warn("calibration skipped: fewer than 2 classes in the training data")
        return None
    vectors = [bundle.features.vector(doc) for doc in train_docs]
    labels = [doc.label for doc in train_docs]
    sets = ClassFeatureSet(
        raw=[[v for v, l in zip(vectors, labels) if l == c] for c in present]
    )
    mlp_names = bundle.store.group("mlp")
    last = None
    for _ in range(config.calibration_steps):
        bundle.store.zero_grad()
        loss = calibration_loss(sets, bundle.mlp, bundle.store)
        last = _check_finite(loss.item(), "calibration loss")
        loss.backward()
        optimizer.step(bundle.store, mlp_names, config.effective_calibration_lr)
    return last


def train(
    bundle: ModelBundle,
    train_docs: Sequence[Document],
    dev_docs: Sequence[Document],
    config: TrainConfig,
) -> tuple[dict[str, np.ndarray], TrainLog]:
    """Alternating training: per epoch, shuffled classification batches, then
    one calibration update (fpt with calibration on), then dev evaluation.
    Returns the best-dev snapshot (ties to the earlier epoch) and the log."""
    if config.mode != bundle.mode:
        raise ConfigError(f"config mode {config.mode!r} does not match bundle mode {bundle.mode!r}")
    log = TrainLog()
    best_snapshot = bundle.store.snapshot()
    if config.epochs == 0:
        return best_snapshot, log

    optimizer = AdamW(weight_decay=config.weight_decay)
    cal_optimizer = AdamW(weight_decay=config.weight_decay)
    shuffle_rng = seeded_rng(config.seed, "shuffle")
    dropout_rng = seeded_rng(config.seed, "dropout")
    n_batches = math.ceil(len(train_docs) / config.batch_size)
    total_steps = config.epochs * n_batches

    best_acc = -1.0
    event = 0
    for epoch in range(1, config.epochs + 1):
        first_cls_step = event + 1
        cls_loss, n_steps = train_epoch_classification(
            bundle, train_docs, config, optimizer, shuffle_rng, dropout_rng,
            step_offset=event, total_steps=total_steps,
        )
        event += n_steps
        last_cls_step = event
        cal_loss = None
        cal_step = None
        if bundle.mode == "fpt" and config.calibration_enabled:
            cal_loss = train_epoch_calibration(bundle, train_docs, config, cal_optimizer)
            if cal_loss is not None:
                event += 1
                cal_step = event
        dev_acc = evaluate_accuracy(bundle, dev_docs)
        log.entries.append(EpochLog(
            epoch=epoch, cls_loss=cls_loss, cal_loss=cal_loss, dev_acc=dev_acc,
            first_cls_step=first_cls_step, last_cls_step=last_cls_step, cal_step=cal_step,
        ))
        if dev_acc > best_acc:
            best_acc = dev_acc
            best_snapshot = bundle.store.snapshot()
            log.best_epoch = epoch
    return best_snapshot, log
