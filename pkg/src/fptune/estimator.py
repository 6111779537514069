"""scikit-learn facade: the feature extractor as a transformer and the
feature-prompt classifier as an estimator, so both compose with pipelines,
grid search, and the rest of the ecosystem."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .encoder import DEFAULT_TEMPLATES, Template
from .tensor import seeded_rng
from .text import BUILTIN_FEATURE_NAMES, Document, builtin_features, builtin_schema, tokenize
from .trainer import FeatureSource, TrainConfig, build_bundle, train


def _check_texts(X) -> list[str]:
    texts = list(X)
    if not texts:
        raise ValueError("X must contain at least one document")
    for i, t in enumerate(texts):
        if not isinstance(t, str):
            raise TypeError(f"X[{i}] is {type(t).__name__}, expected str")
    return texts


class LinguisticFeaturizer(TransformerMixin, BaseEstimator):
    """Readability and lexical-diversity features with fit-time z-scaling.

    fit() learns per-feature mean and standard deviation on the training
    texts; transform() returns the z-scaled (n_samples, 19) feature matrix.
    """

    def fit(self, X, y=None):
        texts = _check_texts(X)
        self.schema_ = builtin_schema().fit([builtin_features(tokenize(t)) for t in texts])
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "schema_")
        texts = _check_texts(X)
        return np.stack([self.schema_.normalize(builtin_features(tokenize(t))) for t in texts])

    def get_feature_names_out(self, input_features=None) -> np.ndarray:
        return np.asarray(BUILTIN_FEATURE_NAMES, dtype=object)


class FeaturePromptClassifier(ClassifierMixin, BaseEstimator):
    """Few-shot readability classifier over raw texts.

    Wraps the full pipeline: builtin feature extraction, the feature-to-soft-
    prompt MLP, the toy transformer encoder, and the alternating training
    procedure.  `mode` selects the input layout: plain fine-tuning ("ft"),
    hard/soft/hybrid prompts ("hp", "sp", "hbp"), or feature prompts ("fpt").

    With validation_fraction > 0 a per-class slice is held out and the best
    checkpoint by held-out accuracy is kept; otherwise checkpoints are
    selected on training accuracy.
    """

    def __init__(
        self,
        mode: str = "fpt",
        epochs: int = 30,
        batch_size: int = 8,
        learning_rate: float = 1e-3,
        weight_decay: float = 0.01,
        warmup_ratio: float = 0.05,
        calibration_enabled: bool = True,
        calibration_learning_rate: float | None = None,
        calibration_steps: int = 1,
        d_model: int = 64,
        n_layers: int = 2,
        n_heads: int = 4,
        d_ff: int = 128,
        max_seq_len: int = 128,
        l_soft_tokens: int = 4,
        dropout_rate: float = 0.0,
        template: str | None = None,
        validation_fraction: float = 0.0,
        seed: int = 0,
    ):
        self.mode = mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.warmup_ratio = warmup_ratio
        self.calibration_enabled = calibration_enabled
        self.calibration_learning_rate = calibration_learning_rate
        self.calibration_steps = calibration_steps
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.max_seq_len = max_seq_len
        self.l_soft_tokens = l_soft_tokens
        self.dropout_rate = dropout_rate
        self.template = template
        self.validation_fraction = validation_fraction
        self.seed = seed

    def _template(self) -> Template | None:
        if self.mode == "sp" or self.mode == "ft":
            return None
        return Template(text=self.template if self.template is not None else DEFAULT_TEMPLATES[0])

    def fit(self, X, y):
        texts = _check_texts(X)
        y = np.asarray(y)
        if len(texts) != len(y):
            raise ValueError(f"X and y disagree in length: {len(texts)} vs {len(y)}")
        self.classes_ = np.unique(y)
        label_of = {cls: i for i, cls in enumerate(self.classes_.tolist())}
        docs = [
            Document(id=f"doc{i}", raw_text=text, label=label_of[label])
            for i, (text, label) in enumerate(zip(texts, y.tolist()))
        ]

        if self.validation_fraction > 0.0:
            rng = seeded_rng(self.seed, "estimator-split")
            dev_ids: set[str] = set()
            for c in range(len(self.classes_)):
                group = [d for d in docs if d.label == c]
                n_dev = max(1, int(round(self.validation_fraction * len(group))))
                if n_dev >= len(group):
                    n_dev = len(group) - 1
                picks = rng.permutation(len(group))[:n_dev]
                dev_ids.update(group[i].id for i in picks)
            train_docs = [d for d in docs if d.id not in dev_ids]
            dev_docs = [d for d in docs if d.id in dev_ids]
            if not train_docs or {d.label for d in train_docs} != set(range(len(self.classes_))):
                raise ValueError("validation_fraction leaves some class without training documents")
        else:
            train_docs, dev_docs = docs, docs

        features = None
        if self.mode == "fpt":
            features = FeatureSource.fit_builtin(train_docs)
        bundle = build_bundle(
            self.mode,
            len(self.classes_),
            train_docs,
            dev_docs,
            seed=self.seed,
            template=self._template(),
            features=features,
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            max_seq_len=self.max_seq_len,
            l_soft_tokens=self.l_soft_tokens,
            dropout_rate=self.dropout_rate,
        )
        config = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            warmup_ratio=self.warmup_ratio,
            calibration_learning_rate=self.calibration_learning_rate,
            calibration_enabled=self.calibration_enabled,
            calibration_steps=self.calibration_steps,
            seed=self.seed,
            mode=self.mode,
        )
        best, log = train(bundle, train_docs, dev_docs, config)
        bundle.store.load_snapshot(best)
        self.bundle_ = bundle
        self.train_log_ = log
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "bundle_")
        texts = _check_texts(X)
        indices = [
            self.bundle_.predict(Document(id=f"predict{i}", raw_text=text, label=0))
            for i, text in enumerate(texts)
        ]
        return self.classes_[np.asarray(indices, dtype=int)]
