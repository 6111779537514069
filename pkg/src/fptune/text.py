"""Deterministic text analysis: tokenization, syllables, readability and
lexical-diversity features, feature schemas, and external feature ingestion.

Builtin extraction is English-only; feature families that need parsers or
norm databases (POS variation, discourse, syntax trees, word norms) enter
solely through the external feature-file interface.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import EmptyDocumentError, FeatureFileError

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+|[^A-Za-z0-9\s]")
_VOWEL_GROUP_RE = re.compile(r"[aeiouy]+")
_SENTENCE_END = frozenset(".!?")

MTLD_THRESHOLD = 0.72


@dataclass
class Document:
    """One labelled text: id, raw UTF-8 text, and a 0-based reading level."""

    id: str
    raw_text: str
    label: int

    def __post_init__(self) -> None:
        if not self.raw_text.strip():
            raise EmptyDocumentError(f"document {self.id!r} is empty")
        if self.label < 0:
            raise ValueError(f"document {self.id!r} has negative label {self.label}")


@dataclass
class TokenizedDoc:
    """Sentence-segmented tokens; `tokens` is the concatenation of `sentences`."""

    sentences: list[list[str]]
    tokens: list[str]
    token_ids: list[int] | None = None

    @property
    def word_tokens(self) -> list[str]:
        return [t for t in self.tokens if t[0].isalnum()]

    @property
    def n_word_sentences(self) -> int:
        """Sentences containing at least one word token (feature denominators)."""
        return sum(1 for s in self.sentences if any(t[0].isalnum() for t in s))


def _sentence_spans(text: str) -> list[str]:
    """Split on ., ! or ? when followed by whitespace or end of text."""
    spans: list[str] = []
    start = 0
    for i, ch in enumerate(text):
        if ch in _SENTENCE_END and (i + 1 == len(text) or text[i + 1].isspace()):
            spans.append(text[start : i + 1])
            start = i + 1
    if start < len(text):
        spans.append(text[start:])
    return [s for s in spans if s.strip()]


def tokenize(raw_text: str) -> TokenizedDoc:
    """Lowercased alphanumeric-run tokens plus single punctuation-mark tokens.

    Punctuation tokens stay in the stream (they carry sentence structure and
    re-tokenize to themselves) but are excluded from all word counts.
    """
    text = raw_text.strip()
    if not text:
        raise EmptyDocumentError("text is empty")
    sentences: list[list[str]] = []
    for span in _sentence_spans(text):
        toks = [t.lower() if t[0].isalnum() else t for t in _TOKEN_RE.findall(span)]
        if toks:
            sentences.append(toks)
    tokens = [t for sentence in sentences for t in sentence]
    if not any(t[0].isalnum() for t in tokens):
        raise EmptyDocumentError("text has no word tokens")
    return TokenizedDoc(sentences=sentences, tokens=tokens)


def count_syllables(word: str) -> int:
    """Maximal vowel groups (a, e, i, o, u, y), trailing lone silent 'e'
    dropped when another group precedes it, floored at 1."""
    w = word.lower()
    groups = _VOWEL_GROUP_RE.findall(w)
    n = len(groups)
    if n > 1 and w.endswith("e") and groups[-1] == "e":
        n -= 1
    return max(n, 1)


def _counts(doc: TokenizedDoc) -> tuple[int, int, int, int, int]:
    words = doc.word_tokens
    n_words = len(words)
    n_sentences = max(doc.n_word_sentences, 1)
    n_chars = sum(len(w) for w in words)
    syllables = [count_syllables(w) for w in words]
    n_syllables = sum(syllables)
    n_complex = sum(1 for s in syllables if s >= 3)
    return n_words, n_sentences, n_chars, n_syllables, n_complex


def shallow_features(doc: TokenizedDoc) -> dict[str, float]:
    """The fourteen shallow features, canonical published formulas.

    FKGL = 0.39 W/S + 11.8 Y/W - 15.59;  ARI = 4.71 C/W + 0.5 W/S - 21.43;
    Coleman-Liau = 0.0588 L - 0.296 Sp - 15.8 with L, Sp per 100 tokens;
    Gunning Fog = 0.4 (W/S + 100 X/W);  SMOG = 1.0430 sqrt(30 X/S) + 3.1291;
    Linsear Write via the standard two-bucket point procedure.  W tokens,
    S sentences, C characters, Y syllables, X words of three or more
    syllables.  log(W)/log(S) is 0 for single-sentence documents (kept
    finite, like the other degenerate-log features).
    """
    n_words, n_sentences, n_chars, n_syllables, n_complex = _counts(doc)
    w, s = float(n_words), float(n_sentences)
    words_per_sentence = w / s
    syllables_per_token = n_syllables / w
    chars_per_token = n_chars / w

    log_ratio = 0.0
    if n_sentences > 1:
        log_ratio = math.log(w) / math.log(s)

    easy = sum(1 for t in doc.word_tokens if count_syllables(t) <= 2)
    linsear_points = easy * 1.0 + (n_words - easy) * 3.0
    provisional = linsear_points / s
    linsear = provisional / 2.0 if provisional > 20.0 else provisional / 2.0 - 1.0

    return {
        "tokens_x_sentences": w * s,
        "sqrt_tokens_x_sentences": math.sqrt(w * s),
        "log_tokens_over_log_sentences": log_ratio,
        "tokens_per_sentence": words_per_sentence,
        "syllables_per_sentence": n_syllables / s,
        "syllables_per_token": syllables_per_token,
        "chars_per_sentence": n_chars / s,
        "chars_per_token": chars_per_token,
        "smog_index": 1.0430 * math.sqrt(n_complex * 30.0 / s) + 3.1291,
        "coleman_liau_index": 0.0588 * (100.0 * chars_per_token) - 0.296 * (100.0 * s / w) - 15.8,
        "gunning_fog_index": 0.4 * (words_per_sentence + 100.0 * n_complex / w),
        "automated_readability_index": 4.71 * chars_per_token + 0.5 * words_per_sentence - 21.43,
        "flesch_kincaid_grade": 0.39 * words_per_sentence + 11.8 * syllables_per_token - 15.59,
        "linsear_write": linsear,
    }


def _mtld_factors(tokens: Sequence[str], threshold: float) -> float:
    factors = 0.0
    seen: set[str] = set()
    length = 0
    for tok in tokens:
        seen.add(tok)
        length += 1
        if len(seen) / length < threshold:
            factors += 1.0
            seen.clear()
            length = 0
    if length > 0:
        ttr = len(seen) / length
        factors += (1.0 - ttr) / (1.0 - threshold)
    return factors


def mtld(tokens: Sequence[str], threshold: float = MTLD_THRESHOLD) -> float:
    """Mean factor length maintaining TTR above the threshold, averaged over
    a forward and a backward pass; 0 when no factor ever completes (the
    all-distinct degenerate case)."""
    tokens = list(tokens)
    values = []
    for direction in (tokens, tokens[::-1]):
        factors = _mtld_factors(direction, threshold)
        values.append(len(direction) / factors if factors > 0 else 0.0)
    return (values[0] + values[1]) / 2.0


def lexical_diversity_features(doc: TokenizedDoc) -> dict[str, float]:
    """Type-token-ratio family on word tokens.

    Bi-logarithmic TTR and the Uber index are 0 whenever all tokens are
    distinct or only one token exists; the logs degenerate there and 0 keeps
    the vectors finite.
    """
    words = doc.word_tokens
    n = len(words)
    types = len(set(words))
    degenerate = types == n or n <= 1
    return {
        "ttr": types / n,
        "corrected_ttr": types / math.sqrt(2.0 * n),
        "bilog_ttr": 0.0 if degenerate else math.log(types) / math.log(n),
        "uber_index": 0.0 if degenerate else math.log(types) ** 2 / math.log(n / types),
        "mtld": mtld(words),
    }


BUILTIN_FEATURE_NAMES: tuple[str, ...] = (
    "tokens_x_sentences",
    "sqrt_tokens_x_sentences",
    "log_tokens_over_log_sentences",
    "tokens_per_sentence",
    "syllables_per_sentence",
    "syllables_per_token",
    "chars_per_sentence",
    "chars_per_token",
    "smog_index",
    "coleman_liau_index",
    "gunning_fog_index",
    "automated_readability_index",
    "flesch_kincaid_grade",
    "linsear_write",
    "ttr",
    "corrected_ttr",
    "bilog_ttr",
    "uber_index",
    "mtld",
)


def builtin_features(doc: TokenizedDoc) -> np.ndarray:
    """All builtin features in BUILTIN_FEATURE_NAMES order."""
    values = shallow_features(doc) | lexical_diversity_features(doc)
    return np.asarray([values[name] for name in BUILTIN_FEATURE_NAMES], dtype=np.float64)


@dataclass
class FeatureVector:
    """The feature vector of one document, with its column names."""

    values: np.ndarray
    feature_names: list[str]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.shape[0] != len(self.feature_names):
            raise ValueError("feature values and names disagree in length")


@dataclass
class FeatureSchema:
    """Ordered feature columns plus z-normalization statistics.

    Statistics are fitted on the k-shot training set only; features constant
    on that set get a standard deviation of 1 so they normalize to 0
    everywhere instead of dividing by zero.
    """

    feature_names: list[str]
    sources: list[str]
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    def __post_init__(self) -> None:
        if len(self.feature_names) != len(self.sources):
            raise ValueError("feature_names and sources disagree in length")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ValueError("feature names must be unique")

    @property
    def alpha(self) -> int:
        return len(self.feature_names)

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    def fit(self, raw_vectors: Sequence[np.ndarray]) -> "FeatureSchema":
        stacked = np.stack([np.asarray(v, dtype=np.float64) for v in raw_vectors])
        if stacked.shape[1] != self.alpha:
            raise ValueError(f"expected width {self.alpha}, got {stacked.shape[1]}")
        self.mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std[std == 0.0] = 1.0
        self.std = std
        return self

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise ValueError("schema statistics not fitted")
        return (np.asarray(raw, dtype=np.float64) - self.mean) / self.std


def builtin_schema() -> FeatureSchema:
    names = list(BUILTIN_FEATURE_NAMES)
    return FeatureSchema(feature_names=names, sources=["builtin"] * len(names))


def combined_schema(external_names: Sequence[str]) -> FeatureSchema:
    names = list(BUILTIN_FEATURE_NAMES) + list(external_names)
    sources = ["builtin"] * len(BUILTIN_FEATURE_NAMES) + ["external"] * len(external_names)
    return FeatureSchema(feature_names=names, sources=sources)


def raw_feature_row(doc: Document, schema: FeatureSchema, external_row: np.ndarray | None = None) -> np.ndarray:
    """Unnormalized feature row for one document under a schema."""
    n_external = sum(1 for s in schema.sources if s == "external")
    parts = []
    if any(s == "builtin" for s in schema.sources):
        parts.append(builtin_features(tokenize(doc.raw_text)))
    if n_external:
        if external_row is None:
            raise FeatureFileError(f"document {doc.id!r} needs {n_external} external feature values")
        external_row = np.asarray(external_row, dtype=np.float64)
        if external_row.shape[0] != n_external:
            raise FeatureFileError(
                f"document {doc.id!r}: expected {n_external} external values, got {external_row.shape[0]}"
            )
        parts.append(external_row)
    return np.concatenate(parts)


def extract(doc: Document, schema: FeatureSchema, external_row: np.ndarray | None = None) -> FeatureVector:
    """Builtin plus external columns, z-normalized with the fitted schema."""
    raw = raw_feature_row(doc, schema, external_row)
    return FeatureVector(values=schema.normalize(raw), feature_names=list(schema.feature_names))


def parse_feature_file(path) -> tuple[list[str], dict[str, np.ndarray]]:
    """Parse a feature CSV: header 'id,<name>...', one numeric row per id."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        raise FeatureFileError(f"{path}: empty feature file")
    header = [c.strip() for c in lines[0].split(",")]
    if not header or header[0] != "id":
        raise FeatureFileError(f"{path}:1: first header column must be 'id'")
    names = header[1:]
    if not names:
        raise FeatureFileError(f"{path}:1: no feature columns")
    rows: dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != len(header):
            raise FeatureFileError(
                f"{path}:{lineno}: expected {len(header)} cells, got {len(cells)}"
            )
        doc_id = cells[0]
        try:
            values = np.asarray([float(c) for c in cells[1:]], dtype=np.float64)
        except ValueError as exc:
            raise FeatureFileError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
        rows[doc_id] = values
    return names, rows


def load_external_features(path, docs: Sequence[Document]) -> list[FeatureVector]:
    """Feature vectors aligned to `docs` by id; column order defines feature order."""
    names, rows = parse_feature_file(path)
    vectors = []
    for doc in docs:
        if doc.id not in rows:
            raise FeatureFileError(f"{path}: no feature row for document id {doc.id!r}")
        vectors.append(FeatureVector(values=rows[doc.id], feature_names=list(names)))
    return vectors


# ---------------------------------------------------------------------------
# vocabulary

PAD, MASK, CLS, SEP, UNK = "[PAD]", "[MASK]", "[CLS]", "[SEP]", "[UNK]"
SPECIAL_TOKENS: tuple[str, ...] = (PAD, MASK, CLS, SEP, UNK)


@dataclass
class Vocab:
    """Token-to-id map: the five specials first, corpus tokens sorted after."""

    tokens: list[str]
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self._index = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def build(cls, token_lists: Iterable[Sequence[str]], extra_tokens: Sequence[str] = ()) -> "Vocab":
        corpus: set[str] = set(extra_tokens)
        for toks in token_lists:
            corpus.update(toks)
        corpus.difference_update(SPECIAL_TOKENS)
        return cls(tokens=list(SPECIAL_TOKENS) + sorted(corpus))

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._index.get(token, self._index[UNK])

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]
