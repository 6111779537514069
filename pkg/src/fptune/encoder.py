"""Toy masked-language-model encoder and prompt-input assembly.

A pre-norm transformer stack (self-attention then position-wise feed-forward,
each behind a residual connection) with sinusoidal positions added before the
first layer and a final parameter-free layer normalization.  Pre-norm trains
stably from random initialization, which matters here because there is no
pretrained warm start.  Layer normalization carries no learned gain or bias.

Five input layouts are assembled:

    ft    ([CLS], e(x), [SEP])               read [CLS] through the FC head
    hp    (e(T with [MASK]), e(x))            read [MASK] through verbalizer
    sp    (soft rows, e([MASK]), e(x))
    hbp   (soft rows, e(T), e([MASK]), e(x))
    fpt   (feature rows, e(T), e([MASK]), e(x))

Over-long inputs lose tokens from the e(x) suffix only; prompt rows are never
truncated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import ConfigError, PromptModeError
from . import tensor as T
from .tensor import ParamStore, Tensor
from .text import CLS, MASK, SEP, TokenizedDoc, Vocab, _TOKEN_RE

MODES = ("ft", "hp", "sp", "hbp", "fpt")
PROMPT_MODES = ("hp", "sp", "hbp", "fpt")

DEFAULT_TEMPLATES = (
    "A [MASK] article to understand: ",
    "A [MASK] text to understand: ",
    "This is a [MASK] article to understand: ",
    "A [MASK] article to read: ",
)


@dataclass
class EncoderConfig:
    vocab_size: int
    n_classes: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_seq_len: int = 128
    l_soft_tokens: int = 4
    dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate {self.dropout_rate} outside [0, 1)")
        for name in ("vocab_size", "n_classes", "d_model", "n_layers", "n_heads", "d_ff", "max_seq_len"):
            if getattr(self, name) < (0 if name == "n_layers" else 1):
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass
class Template:
    """A token template with exactly one [MASK] placeholder."""

    text: str
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.text.count("[MASK]") != 1:
            raise ConfigError(f"template needs exactly one [MASK]: {self.text!r}")
        if not self.tokens:
            before, after = self.text.split("[MASK]")
            self.tokens = self._side(before) + [MASK] + self._side(after)

    @staticmethod
    def _side(part: str) -> list[str]:
        return [t.lower() if t[0].isalnum() else t for t in _TOKEN_RE.findall(part)]

    @property
    def mask_index(self) -> int:
        return self.tokens.index(MASK)

    @property
    def word_tokens(self) -> list[str]:
        return [t for t in self.tokens if t != MASK]


def load_templates(path) -> list[Template]:
    templates = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            templates.append(Template(text=line))
    if not templates:
        raise ConfigError(f"{path}: no templates")
    return templates


@dataclass
class PromptInput:
    """Assembled input rows plus the readout positions."""

    mode: str
    embedding_rows: Tensor
    mask_position: int | None = None
    cls_position: int | None = None
    n_prompt_rows: int = 0

    def __post_init__(self) -> None:
        if self.mode in PROMPT_MODES and self.mask_position is None:
            raise PromptModeError(f"mode {self.mode!r} needs a mask position")

    @property
    def seq_len(self) -> int:
        return self.embedding_rows.shape[0]


# ---------------------------------------------------------------------------
# parameters


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_encoder_params(store: ParamStore, config: EncoderConfig, rng: np.random.Generator) -> None:
    d, ff = config.d_model, config.d_ff
    store.register("encoder.embedding", _uniform(rng, d, (config.vocab_size, d)))
    for i in range(config.n_layers):
        prefix = f"encoder.layer{i}"
        for name in ("wq", "wk", "wv", "wo"):
            store.register(f"{prefix}.attn.{name}", _uniform(rng, d, (d, d)))
            if name != "wk":
                # no key bias: a shared shift of all keys adds a per-row
                # constant to the scores, which the row softmax cancels, so
                # the parameter would be unidentifiable (gradient exactly 0)
                store.register(f"{prefix}.attn.{name[1]}b", _uniform(rng, d, d))
        store.register(f"{prefix}.ffn.w1", _uniform(rng, d, (d, ff)))
        store.register(f"{prefix}.ffn.b1", _uniform(rng, d, ff))
        store.register(f"{prefix}.ffn.w2", _uniform(rng, ff, (ff, d)))
        store.register(f"{prefix}.ffn.b2", _uniform(rng, ff, d))


def init_verbalizer(store: ParamStore, config: EncoderConfig, rng: np.random.Generator) -> None:
    store.register("verbalizer.weight", _uniform(rng, config.d_model, (config.n_classes, config.d_model)))
    store.register("verbalizer.bias", _uniform(rng, config.d_model, config.n_classes))


def init_cls_head(store: ParamStore, config: EncoderConfig, rng: np.random.Generator) -> None:
    store.register("cls_head.weight", _uniform(rng, config.d_model, (config.n_classes, config.d_model)))
    store.register("cls_head.bias", _uniform(rng, config.d_model, config.n_classes))


def init_soft_prompt(store: ParamStore, config: EncoderConfig, rng: np.random.Generator) -> None:
    """Soft rows start as the embeddings of randomly sampled vocabulary rows."""
    table = store["encoder.embedding"].data
    lo = 5 if table.shape[0] > 5 else 0  # skip the special rows when possible
    ids = rng.integers(lo, table.shape[0], size=config.l_soft_tokens)
    store.register("soft_prompt", table[ids] * math.sqrt(config.d_model))


# ---------------------------------------------------------------------------
# positional encodings

_pe_cache: dict[tuple[int, int], np.ndarray] = {}


def sinusoidal_positions(seq_len: int, d_model: int) -> np.ndarray:
    key = (seq_len, d_model)
    if key not in _pe_cache:
        pos = np.arange(seq_len, dtype=np.float64)[:, None]
        dim = np.arange(d_model, dtype=np.float64)[None, :]
        angle = pos / np.power(10000.0, 2.0 * np.floor(dim / 2.0) / d_model)
        table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
        _pe_cache[key] = table
    return _pe_cache[key]


# ---------------------------------------------------------------------------
# assembly


def _embed_ids(ids: Sequence[int], store: ParamStore, config: EncoderConfig) -> Tensor:
    rows = T.embedding(store["encoder.embedding"], ids)
    return T.mul(rows, Tensor(math.sqrt(config.d_model)))


def assemble(
    mode: str,
    doc: TokenizedDoc,
    store: ParamStore,
    config: EncoderConfig,
    vocab: Vocab,
    template: Template | None = None,
    soft: Tensor | None = None,
    feature_vs: Tensor | None = None,
) -> PromptInput:
    """Build the input rows for one document under the given mode.

    Soft rows (sp, hbp) and feature rows (fpt) pass through unchanged, so the
    caller controls whether gradient reaches their producers.
    """
    mode = mode.lower()
    if mode not in MODES:
        raise PromptModeError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode in ("hp", "hbp", "fpt") and template is None:
        raise PromptModeError(f"mode {mode!r} needs a template")
    if mode in ("sp", "hbp") and soft is None:
        raise PromptModeError(f"mode {mode!r} needs soft prompt rows")
    if mode == "fpt" and feature_vs is None:
        raise PromptModeError(f"mode {mode!r} needs feature prompt rows")

    x_ids = doc.token_ids if doc.token_ids is not None else vocab.encode(doc.tokens)

    if mode == "ft":
        prefix = 1  # [CLS]
        budget = config.max_seq_len - prefix - 1  # trailing [SEP]
        if budget < 0:
            raise ConfigError(f"max_seq_len {config.max_seq_len} cannot hold [CLS] and [SEP]")
        x_ids = x_ids[:budget]
        rows = _embed_ids([vocab.id_of(CLS)] + x_ids + [vocab.id_of(SEP)], store, config)
        return PromptInput(mode=mode, embedding_rows=rows, cls_position=0, n_prompt_rows=1)

    if mode == "hp":
        t_ids = vocab.encode(template.tokens)
        prefix = len(t_ids)
        mask_position = template.mask_index
        parts_prefix = None
    else:
        l = soft.shape[0] if mode in ("sp", "hbp") else feature_vs.shape[0]
        t_tokens = template.word_tokens if mode in ("hbp", "fpt") else []
        t_ids = vocab.encode(t_tokens) + [vocab.id_of(MASK)]
        prefix = l + len(t_ids)
        mask_position = prefix - 1
        parts_prefix = soft if mode in ("sp", "hbp") else feature_vs

    budget = config.max_seq_len - prefix
    if budget < 0:
        raise ConfigError(
            f"max_seq_len {config.max_seq_len} cannot hold the {prefix} prompt rows of mode {mode!r}"
        )
    x_ids = x_ids[:budget]

    suffix = _embed_ids(t_ids + x_ids, store, config)
    if parts_prefix is None:
        rows = suffix
    else:
        rows = T.concat_rows([parts_prefix, suffix])
    return PromptInput(mode=mode, embedding_rows=rows, mask_position=mask_position, n_prompt_rows=prefix)


# ---------------------------------------------------------------------------
# forward pass


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, Tensor(keep))


def _attention_block(x: Tensor, prefix: str, store: ParamStore, config: EncoderConfig,
                     train: bool, rng: np.random.Generator | None) -> Tensor:
    h = T.layernorm_rows(x)
    q = T.add(T.matmul(h, store[f"{prefix}.wq"]), store[f"{prefix}.qb"])
    k = T.matmul(h, store[f"{prefix}.wk"])
    v = T.add(T.matmul(h, store[f"{prefix}.wv"]), store[f"{prefix}.vb"])
    d_head = config.d_model // config.n_heads
    scale = Tensor(1.0 / math.sqrt(d_head))
    heads = []
    for i in range(config.n_heads):
        lo, hi = i * d_head, (i + 1) * d_head
        qi, ki, vi = (T.slice_cols(t, lo, hi) for t in (q, k, v))
        scores = T.mul(T.matmul(qi, T.transpose(ki)), scale)
        heads.append(T.matmul(T.softmax_rows(scores), vi))
    out = T.add(T.matmul(T.concat_cols(heads), store[f"{prefix}.wo"]), store[f"{prefix}.ob"])
    if train:
        out = _dropout(out, config.dropout_rate, rng)
    return T.add(x, out)


def _ffn_block(x: Tensor, prefix: str, store: ParamStore, config: EncoderConfig,
               train: bool, rng: np.random.Generator | None) -> Tensor:
    h = T.layernorm_rows(x)
    inner = T.gelu(T.add(T.matmul(h, store[f"{prefix}.w1"]), store[f"{prefix}.b1"]))
    out = T.add(T.matmul(inner, store[f"{prefix}.w2"]), store[f"{prefix}.b2"])
    if train:
        out = _dropout(out, config.dropout_rate, rng)
    return T.add(x, out)


def encode(
    prompt: PromptInput,
    store: ParamStore,
    config: EncoderConfig,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    seq = prompt.seq_len
    if seq > config.max_seq_len:
        raise ConfigError(f"sequence length {seq} exceeds max_seq_len {config.max_seq_len}")
    h = T.add(prompt.embedding_rows, Tensor(sinusoidal_positions(seq, config.d_model)))
    for i in range(config.n_layers):
        h = _attention_block(h, f"encoder.layer{i}.attn", store, config, train, dropout_rng)
        h = _ffn_block(h, f"encoder.layer{i}.ffn", store, config, train, dropout_rng)
    return T.layernorm_rows(h)


def classify(
    prompt: PromptInput,
    store: ParamStore,
    config: EncoderConfig,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    """Class logits: the [MASK] row through the verbalizer for prompt modes,
    the [CLS] row through the FC head for plain fine-tuning."""
    hidden = encode(prompt, store, config, train=train, dropout_rng=dropout_rng)
    if prompt.mode == "ft":
        vec = T.take_row(hidden, prompt.cls_position)
        return T.add(T.matvec(store["cls_head.weight"], vec), store["cls_head.bias"])
    vec = T.take_row(hidden, prompt.mask_position)
    return T.add(T.matvec(store["verbalizer.weight"], vec), store["verbalizer.bias"])


def classification_loss(
    batch: Sequence[tuple[PromptInput, int]],
    store: ParamStore,
    config: EncoderConfig,
    train: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> Tensor:
    """Mean cross-entropy over the batch."""
    if not batch:
        raise ValueError("classification_loss needs a non-empty batch")
    total = None
    for prompt, label in batch:
        loss = T.cross_entropy(classify(prompt, store, config, train=train, dropout_rng=dropout_rng), label)
        total = loss if total is None else T.add(total, loss)
    return T.mul(total, Tensor(1.0 / len(batch)))
