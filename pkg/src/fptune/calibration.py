"""Inter-class similarity calibration.

Class-pair similarities are mean cross-pair cosines.  The raw-feature
similarity matrix fixes a per-column ranking of classes; the embedded-feature
matrix is rearranged into that order and pushed toward it by a list-wise
Plackett-Luce likelihood loss.  Gradients flow only through the embedded
side: the raw ranking is an input, piecewise constant, and deliberately
detached.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DimensionError
from . import tensor as T
from .feature_prompt import MultiHeadMLP, pool
from .tensor import ParamStore, Tensor


def _as_vector(value) -> Tensor:
    t = value if isinstance(value, Tensor) else Tensor(value)
    if t.ndim != 1:
        raise DimensionError(f"expected a feature vector, got shape {t.shape}")
    return t


@dataclass
class ClassFeatureSet:
    """Per-class lists of raw feature vectors, in class-index order."""

    raw: list[list[np.ndarray]]

    def __post_init__(self) -> None:
        if any(len(group) < 1 for group in self.raw):
            raise ValueError("every class needs at least one sample")

    @property
    def n_classes(self) -> int:
        return len(self.raw)

    @classmethod
    def from_labelled(cls, vectors: Sequence[np.ndarray], labels: Sequence[int], n_classes: int) -> "ClassFeatureSet":
        groups: list[list[np.ndarray]] = [[] for _ in range(n_classes)]
        for vec, label in zip(vectors, labels):
            groups[int(label)].append(np.asarray(vec, dtype=np.float64))
        return cls(raw=groups)


@dataclass
class SimilarityMatrix:
    """An n-by-n inter-class similarity matrix and which feature space made it."""

    values: Tensor
    source: str  # "raw" | "embedded"

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class RankingOrder:
    """Per column i, the rows of the matrix sorted by descending similarity."""

    columns: list[np.ndarray]

    @property
    def n(self) -> int:
        return len(self.columns)


def class_pair_similarity(fm: Sequence, fn: Sequence) -> Tensor:
    """Mean cosine over all cross pairs, normalized by |Fm| * |Fn|.

    Equal sample counts recover the plain k-squared mean; unequal counts keep
    the mean interpretation.
    """
    if not fm or not fn:
        raise ValueError("class feature lists must be non-empty")
    us = [_as_vector(u) for u in fm]
    vs = [_as_vector(v) for v in fn]
    width = us[0].shape[0]
    for vec in us + vs:
        if vec.shape[0] != width:
            raise DimensionError(f"feature widths differ: {width} vs {vec.shape[0]}")
    total = T.cosine(us[0], vs[0])
    for i, u in enumerate(us):
        for j, v in enumerate(vs):
            if i == 0 and j == 0:
                continue
            total = T.add(total, T.cosine(u, v))
    return T.mul(total, Tensor(1.0 / (len(us) * len(vs))))


def similarity_matrix(class_vectors: Sequence[Sequence], source: str) -> SimilarityMatrix:
    """Pairwise class similarities; the upper triangle is computed and
    mirrored, so the result is symmetric exactly."""
    n = len(class_vectors)
    if n < 2:
        raise ValueError(f"need at least 2 classes, got {n}")
    entries: dict[tuple[int, int], Tensor] = {}
    for m in range(n):
        for k in range(m, n):
            entries[(m, k)] = class_pair_similarity(class_vectors[m], class_vectors[k])
    rows = [
        T.stack_vec([entries[(min(m, k), max(m, k))] for k in range(n)])
        for m in range(n)
    ]
    return SimilarityMatrix(values=T.stack_rows(rows), source=source)


def ranking_order(matrix: SimilarityMatrix) -> RankingOrder:
    """Descending sort of each column; ties broken by ascending row index."""
    values = matrix.values.data
    columns = [np.argsort(-values[:, i], kind="stable") for i in range(values.shape[1])]
    return RankingOrder(columns=columns)


def rearrange(matrix: SimilarityMatrix, order: RankingOrder) -> Tensor:
    """Permute each column's rows by the ranking, so row r of column i holds
    the similarity of the r-th-ranked class under the reference order."""
    values = matrix.values
    n = values.shape[0]
    if values.shape != (n, n) or order.n != n:
        raise DimensionError(f"matrix shape {values.shape} does not match ranking over {order.n} columns")
    rows = [
        T.stack_vec([T.take_elem(values, int(order.columns[i][r]), i) for i in range(n)])
        for r in range(n)
    ]
    return T.stack_rows(rows)


def listmle_loss(rearranged: Tensor) -> Tensor:
    """Negative log Plackett-Luce likelihood of each column's top-down order,
    summed over columns.

    Column term: sum_i [logsumexp(rows i..n) - row_i].  Every term is
    nonnegative and the final one is identically zero.
    """
    if rearranged.ndim != 2:
        raise DimensionError(f"expected a matrix, got shape {rearranged.shape}")
    n_rows, n_cols = rearranged.shape
    total = Tensor(0.0)
    for k in range(n_cols):
        column = [T.take_elem(rearranged, i, k) for i in range(n_rows)]
        for i in range(n_rows - 1):
            suffix = T.stack_vec(column[i:])
            total = T.add(total, T.sub(T.logsumexp(suffix), column[i]))
    return total


def embedded_class_vectors(
    sets: ClassFeatureSet, mlp: MultiHeadMLP, store: ParamStore
) -> list[list[Tensor]]:
    """Pooled multi-head embeddings of every sample, grouped by class."""
    return [[pool(mlp.embed(vec, store)) for vec in group] for group in sets.raw]


def calibration_loss(sets: ClassFeatureSet, mlp: MultiHeadMLP, store: ParamStore) -> Tensor:
    """ListMLE loss of the embedded similarity matrix rearranged by the raw
    matrix's column ranking.  Only MLP parameters receive gradient."""
    if sets.n_classes < 2:
        raise ValueError(f"calibration needs at least 2 classes, got {sets.n_classes}")
    raw_matrix = similarity_matrix(sets.raw, source="raw")
    order = ranking_order(raw_matrix)
    embedded = similarity_matrix(embedded_class_vectors(sets, mlp, store), source="embedded")
    return listmle_loss(rearrange(embedded, order))


def similarity_grids(sets: ClassFeatureSet, mlp: MultiHeadMLP, store: ParamStore) -> dict[str, np.ndarray]:
    """Raw matrix, embedded matrix, and their entrywise difference."""
    raw = similarity_matrix(sets.raw, source="raw").values.data
    embedded = similarity_matrix(embedded_class_vectors(sets, mlp, store), source="embedded").values.data
    return {"raw": raw, "embedded": embedded, "difference": embedded - raw}


def write_similarity_grids(grids: dict[str, np.ndarray], out_dir) -> list[Path]:
    """Dump each n-by-n grid as a comma-separated file under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in ("raw", "embedded", "difference"):
        path = out_dir / f"{name}.csv"
        lines = [",".join(f"{v:.17g}" for v in row) for row in grids[name]]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written
