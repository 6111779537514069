"""Feature-to-prompt embedding: a multi-head MLP maps one linguistic feature
vector to l soft-prompt rows, and average pooling collapses those rows into
the per-document representation the calibration loss compares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError
from . import tensor as T
from .tensor import ParamStore, Tensor


def _affine_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> tuple[np.ndarray, np.ndarray]:
    bound = 1.0 / np.sqrt(fan_in)
    weight = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    bias = rng.uniform(-bound, bound, size=fan_out)
    return weight, bias


@dataclass
class MultiHeadMLP:
    """Shared tanh trunk (alpha -> d_hidden) feeding l independent tanh heads
    (d_hidden -> d_model).  Heads own separate parameters, so a document's
    rows differ unless heads are deliberately tied."""

    alpha: int
    n_heads: int
    d_model: int
    d_hidden: int = 64

    def init_params(self, store: ParamStore, rng: np.random.Generator) -> None:
        w, b = _affine_init(rng, self.alpha, self.d_hidden)
        store.register("mlp.trunk.weight", w)
        store.register("mlp.trunk.bias", b)
        for i in range(self.n_heads):
            w, b = _affine_init(rng, self.d_hidden, self.d_model)
            store.register(f"mlp.head.{i}.weight", w)
            store.register(f"mlp.head.{i}.bias", b)

    def embed(self, features, store: ParamStore) -> Tensor:
        """Map one feature vector to an (l, d_model) matrix of prompt rows."""
        f = features if isinstance(features, Tensor) else Tensor(features)
        if f.ndim != 1 or f.shape[0] != self.alpha:
            raise DimensionError(f"expected feature vector of width {self.alpha}, got shape {f.shape}")
        hidden = T.tanh(T.add(T.matvec(store["mlp.trunk.weight"], f), store["mlp.trunk.bias"]))
        rows = [
            T.tanh(
                T.add(
                    T.matvec(store[f"mlp.head.{i}.weight"], hidden),
                    store[f"mlp.head.{i}.bias"],
                )
            )
            for i in range(self.n_heads)
        ]
        return T.stack_rows(rows)


def pool(rows: Tensor) -> Tensor:
    """Coordinate-wise mean over the l prompt rows: (l, d_model) -> (d_model,)."""
    if rows.ndim != 2 or rows.shape[0] < 1:
        raise DimensionError(f"pool expects a non-empty row matrix, got shape {rows.shape}")
    return T.mean_rows(rows)
