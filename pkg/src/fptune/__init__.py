"""fptune: a desk-scale laboratory for feature-prompt tuning.

Linguistic features are extracted from documents, mapped into soft-prompt
embedding rows by a multi-head MLP, and fed with template and text embeddings
through a small from-scratch transformer encoder.  An inter-class similarity
calibration loss keeps the embedded features' class-similarity ranking
aligned with the raw features'.  Everything is float64 with verified
gradients, so the whole pipeline is checkable by finite differences and
brute-force oracles.

Public surface: the scikit-learn style estimators below, the per-module
laboratory APIs (tensor, text, encoder, feature_prompt, calibration, trainer,
harness), and the `fptune` command line.
"""

from .exceptions import FptError
from .tensor import ParamStore, Tensor, cosine, cross_entropy, grad_check, matmul, seeded_rng, softmax
from .checkpoint import load_checkpoint, save_checkpoint
from .text import (
    BUILTIN_FEATURE_NAMES,
    Document,
    FeatureSchema,
    FeatureVector,
    TokenizedDoc,
    Vocab,
    count_syllables,
    extract,
    lexical_diversity_features,
    load_external_features,
    shallow_features,
    tokenize,
)
from .encoder import DEFAULT_TEMPLATES, EncoderConfig, PromptInput, Template, assemble, classify, encode
from .feature_prompt import MultiHeadMLP, pool
from .calibration import (
    ClassFeatureSet,
    RankingOrder,
    SimilarityMatrix,
    calibration_loss,
    class_pair_similarity,
    listmle_loss,
    ranking_order,
    rearrange,
    similarity_matrix,
)
from .trainer import AdamW, FeatureSource, ModelBundle, TrainConfig, TrainLog, adamw_step, build_bundle, train
from .harness import (
    Dataset,
    ExperimentPlan,
    FewShotSplit,
    RunMatrix,
    ablation_suite,
    accuracy,
    load_dataset_jsonl,
    run_matrix,
    sample_few_shot,
    synth_dataset,
)
from .estimator import FeaturePromptClassifier, LinguisticFeaturizer

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "BUILTIN_FEATURE_NAMES",
    "ClassFeatureSet",
    "DEFAULT_TEMPLATES",
    "Dataset",
    "Document",
    "EncoderConfig",
    "ExperimentPlan",
    "FeaturePromptClassifier",
    "FeatureSchema",
    "FeatureSource",
    "FeatureVector",
    "FewShotSplit",
    "FptError",
    "LinguisticFeaturizer",
    "ModelBundle",
    "MultiHeadMLP",
    "ParamStore",
    "PromptInput",
    "RankingOrder",
    "RunMatrix",
    "SimilarityMatrix",
    "Template",
    "Tensor",
    "TokenizedDoc",
    "TrainConfig",
    "TrainLog",
    "Vocab",
    "ablation_suite",
    "accuracy",
    "adamw_step",
    "assemble",
    "build_bundle",
    "calibration_loss",
    "class_pair_similarity",
    "classify",
    "cosine",
    "count_syllables",
    "cross_entropy",
    "encode",
    "extract",
    "grad_check",
    "lexical_diversity_features",
    "listmle_loss",
    "load_checkpoint",
    "load_dataset_jsonl",
    "load_external_features",
    "matmul",
    "pool",
    "ranking_order",
    "rearrange",
    "run_matrix",
    "sample_few_shot",
    "save_checkpoint",
    "seeded_rng",
    "shallow_features",
    "similarity_matrix",
    "softmax",
    "synth_dataset",
    "tokenize",
    "train",
    "__version__",
]
