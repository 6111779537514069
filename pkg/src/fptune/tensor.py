"""Dense float64 tensors with a minimal reverse-mode gradient tape.

Every operation here builds a computation graph node holding its inputs and a
closure that routes the upstream gradient to them.  Calling
:meth:`Tensor.backward` on a scalar walks the graph once in reverse
topological order.  The only gradient contract anything downstream relies on
is empirical: :func:`grad_check` compares the tape's gradients against
central finite differences, and the test suite holds every composite loss to
that check.

All arrays are 64-bit floats; gradient checks at h = 1e-5 need the precision
and nothing here is performance critical.
"""

from __future__ import annotations

import hashlib
import math
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .exceptions import DimensionError, GradCheckError

Array = np.ndarray

# Norms are clamped to this before dividing, so cosine of a zero vector is 0
# instead of NaN.
NORM_EPS = 1e-12


def seeded_rng(seed: int, label: str = "") -> np.random.Generator:
    """Named deterministic generator; identical across runs and machines.

    The label is folded in through a stable digest (not ``hash()``, which is
    salted per process) so independent sampling streams can be derived from
    one experiment seed.
    """
    if label:
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        child = int.from_bytes(digest[:8], "little")
        return np.random.default_rng(np.random.SeedSequence([int(seed), child]))
    return np.random.default_rng(np.random.SeedSequence([int(seed)]))


def _as_f64(value) -> Array:
    return np.asarray(value, dtype=np.float64)


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation.

    Tensors are immutable by convention once built: no operation writes to an
    input's ``data``.  The single sanctioned writer is the optimizer, which
    updates parameter ``data`` in place between forward passes.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = _as_f64(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self, grad: Array | None = None) -> None:
        """Accumulate gradients of this (scalar) value into the graph."""
        if grad is None:
            if self.data.ndim != 0:
                raise DimensionError(
                    f"backward() without an explicit gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones((), dtype=np.float64)
        _accumulate(self, _as_f64(grad))
        for node in reversed(_toposort(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operators cover the compositions the losses are written with.
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(t: Tensor, g: Array) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _node(data: Array, parents: Sequence[Tensor], backward: Callable[[Array], None]) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def div(a: Tensor, b: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node(a.data / b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        _accumulate(a, -g)

    return _node(-a.data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g: Array) -> None:
        _accumulate(a, g * (1.0 - y * y))

    return _node(y, (a,), backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU; smooth everywhere, so finite differences agree."""
    x = a.data
    cdf = 0.5 * (1.0 + _erf(x * _INV_SQRT2))
    y = x * cdf

    def backward(g: Array) -> None:
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        _accumulate(a, g * (cdf + x * pdf))

    return _node(y, (a,), backward)


_erf = np.vectorize(math.erf, otypes=[np.float64])


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)

    def backward(g: Array) -> None:
        _accumulate(a, g * y)

    return _node(y, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        _accumulate(a, g / a.data)

    return _node(np.log(a.data), (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)

    def backward(g: Array) -> None:
        _accumulate(a, g * 0.5 / y)

    return _node(y, (a,), backward)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient passes only where the input is above the floor."""
    mask = a.data > floor

    def backward(g: Array) -> None:
        _accumulate(a, g * mask)

    return _node(np.maximum(a.data, floor), (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g: Array) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def matvec(a: Tensor, x: Tensor) -> Tensor:
    if a.ndim != 2 or x.ndim != 1 or a.shape[1] != x.shape[0]:
        raise DimensionError(f"matvec: incompatible shapes {a.shape} and {x.shape}")

    def backward(g: Array) -> None:
        _accumulate(a, np.outer(g, x.data))
        _accumulate(x, a.data.T @ g)

    return _node(a.data @ x.data, (a, x), backward)


def dot(u: Tensor, v: Tensor) -> Tensor:
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise DimensionError(f"dot: incompatible shapes {u.shape} and {v.shape}")

    def backward(g: Array) -> None:
        _accumulate(u, g * v.data)
        _accumulate(v, g * u.data)

    return _node(np.asarray(u.data @ v.data), (u, v), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")

    def backward(g: Array) -> None:
        _accumulate(a, g.T)

    return _node(a.data.T.copy(), (a,), backward)


# ---------------------------------------------------------------------------
# reductions and structure


def sum_all(a: Tensor) -> Tensor:
    def backward(g: Array) -> None:
        _accumulate(a, np.full_like(a.data, float(g)))

    return _node(np.asarray(a.data.sum()), (a,), backward)


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean of a matrix: (n, d) -> (d,)."""
    if a.ndim != 2:
        raise DimensionError(f"mean_rows expects a matrix, got shape {a.shape}")
    n = a.shape[0]

    def backward(g: Array) -> None:
        _accumulate(a, np.broadcast_to(g / n, a.shape).copy())

    return _node(a.data.mean(axis=0), (a,), backward)


def take_row(a: Tensor, index: int) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"take_row expects a matrix, got shape {a.shape}")

    def backward(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[index] = g
        _accumulate(a, full)

    return _node(a.data[index].copy(), (a,), backward)


def take_elem(a: Tensor, i: int, j: int) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"take_elem expects a matrix, got shape {a.shape}")

    def backward(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[i, j] = g
        _accumulate(a, full)

    return _node(np.asarray(a.data[i, j]), (a,), backward)


def slice_vec(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 1:
        raise DimensionError(f"slice_vec expects a vector, got shape {a.shape}")

    def backward(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[start:stop] = g
        _accumulate(a, full)

    return _node(a.data[start:stop].copy(), (a,), backward)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"slice_cols expects a matrix, got shape {a.shape}")

    def backward(g: Array) -> None:
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        _accumulate(a, full)

    return _node(a.data[:, start:stop].copy(), (a,), backward)


def stack_vec(parts: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a vector."""
    for p in parts:
        if p.ndim != 0:
            raise DimensionError(f"stack_vec expects scalars, got shape {p.shape}")
    parts = tuple(parts)

    def backward(g: Array) -> None:
        for i, p in enumerate(parts):
            _accumulate(p, g[i])

    return _node(np.stack([p.data for p in parts]), parts, backward)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack vectors of equal length into a matrix, one per row."""
    parts = tuple(parts)
    for p in parts:
        if p.ndim != 1 or p.shape != parts[0].shape:
            raise DimensionError("stack_rows expects equal-length vectors")

    def backward(g: Array) -> None:
        for i, p in enumerate(parts):
            _accumulate(p, g[i])

    return _node(np.stack([p.data for p in parts]), parts, backward)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Vertically concatenate matrices with a common width."""
    parts = tuple(parts)
    width = parts[0].shape[1]
    for p in parts:
        if p.ndim != 2 or p.shape[1] != width:
            raise DimensionError("concat_rows expects matrices of one width")
    counts = [p.shape[0] for p in parts]

    def backward(g: Array) -> None:
        offset = 0
        for p, count in zip(parts, counts):
            _accumulate(p, g[offset : offset + count])
            offset += count

    return _node(np.concatenate([p.data for p in parts], axis=0), parts, backward)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Horizontally concatenate matrices with a common height."""
    parts = tuple(parts)
    height = parts[0].shape[0]
    for p in parts:
        if p.ndim != 2 or p.shape[0] != height:
            raise DimensionError("concat_cols expects matrices of one height")
    counts = [p.shape[1] for p in parts]

    def backward(g: Array) -> None:
        offset = 0
        for p, count in zip(parts, counts):
            _accumulate(p, g[:, offset : offset + count])
            offset += count

    return _node(np.concatenate([p.data for p in parts], axis=1), parts, backward)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of an embedding table; gradients scatter-add back."""
    if table.ndim != 2:
        raise DimensionError(f"embedding expects a matrix table, got shape {table.shape}")
    idx = np.asarray(list(ids), dtype=np.intp)

    def backward(g: Array) -> None:
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        _accumulate(table, full)

    return _node(table.data[idx].copy(), (table,), backward)


# ---------------------------------------------------------------------------
# normalizations and losses


def softmax(x: Tensor) -> Tensor:
    """Stable softmax of a vector (max-subtracted before exponentiation)."""
    if x.ndim != 1 or x.shape[0] < 1:
        raise DimensionError(f"softmax expects a non-empty vector, got shape {x.shape}")
    shifted = x.data - x.data.max()
    e = np.exp(shifted)
    p = e / e.sum()

    def backward(g: Array) -> None:
        _accumulate(x, p * (g - float(g @ p)))

    return _node(p, (x,), backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise stable softmax of a matrix."""
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects a matrix, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g: Array) -> None:
        inner = (g * p).sum(axis=1, keepdims=True)
        _accumulate(x, p * (g - inner))

    return _node(p, (x,), backward)


def logsumexp(x: Tensor) -> Tensor:
    """Stable log-sum-exp of a vector; gradient is the softmax."""
    if x.ndim != 1 or x.shape[0] < 1:
        raise DimensionError(f"logsumexp expects a non-empty vector, got shape {x.shape}")
    m = x.data.max()
    e = np.exp(x.data - m)
    z = e.sum()
    p = e / z

    def backward(g: Array) -> None:
        _accumulate(x, float(g) * p)

    return _node(np.asarray(m + math.log(z)), (x,), backward)


def layernorm_rows(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization without learned gain or bias."""
    if x.ndim != 2:
        raise DimensionError(f"layernorm_rows expects a matrix, got shape {x.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    sigma = np.sqrt(var + eps)
    y = (x.data - mu) / sigma

    def backward(g: Array) -> None:
        g_mean = g.mean(axis=1, keepdims=True)
        gy_mean = (g * y).mean(axis=1, keepdims=True)
        _accumulate(x, (g - g_mean - y * gy_mean) / sigma)

    return _node(y, (x,), backward)


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log softmax probability of the labelled class."""
    if logits.ndim != 1:
        raise DimensionError(f"cross_entropy expects a logits vector, got shape {logits.shape}")
    n = logits.shape[0]
    if not 0 <= int(label) < n:
        raise IndexError(f"label {label} out of range for {n} classes")
    label = int(label)
    m = logits.data.max()
    e = np.exp(logits.data - m)
    z = e.sum()
    p = e / z
    loss = m + math.log(z) - logits.data[label]

    def backward(g: Array) -> None:
        d = p.copy()
        d[label] -= 1.0
        _accumulate(logits, float(g) * d)

    return _node(np.asarray(loss), (logits,), backward)


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity with norms clamped at NORM_EPS.

    Zero vectors therefore score 0 against everything, keeping the
    calibration loss defined on degenerate feature vectors.
    """
    if u.ndim != 1 or v.ndim != 1 or u.shape != v.shape:
        raise DimensionError(f"cosine: incompatible shapes {u.shape} and {v.shape}")
    nu = clamp_min(sqrt(dot(u, u)), NORM_EPS)
    nv = clamp_min(sqrt(dot(v, v)), NORM_EPS)
    return div(dot(u, v), mul(nu, nv))


# ---------------------------------------------------------------------------
# parameters and verification


class ParamStore:
    """Named trainable tensors with deterministic, name-sorted iteration."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, value) -> Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already registered")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return sorted(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def items(self) -> list[tuple[str, Tensor]]:
        return [(name, self._params[name]) for name in self.names()]

    def group(self, prefix: str) -> list[str]:
        """Names in the group, i.e. equal to the prefix or under 'prefix.'."""
        return [n for n in self.names() if n == prefix or n.startswith(prefix + ".")]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def snapshot(self) -> dict[str, Array]:
        return {name: t.data.copy() for name, t in self.items()}

    def load_snapshot(self, arrays: Mapping[str, Array]) -> None:
        for name, t in self.items():
            if name not in arrays:
                raise KeyError(f"snapshot missing parameter {name!r}")
            src = _as_f64(arrays[name])
            if src.shape != t.data.shape:
                raise DimensionError(
                    f"snapshot shape {src.shape} does not match parameter {name!r} shape {t.data.shape}"
                )
            t.data = src.copy()


def grad_check(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    h: float = 1e-5,
    max_coords_per_tensor: int = 8,
) -> float:
    """Max relative error between tape gradients and central differences.

    For each parameter the coordinates with the largest analytic gradient
    magnitudes are sampled, and |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8) is taken over every sampled coordinate.  Sampling by
    magnitude keeps the comparison above the central-difference noise floor
    (about eps * |f| / h): a coordinate whose true gradient is below that
    floor measures roundoff, not tape correctness, while any mis-routed
    backward contribution distorts the large coordinates first.
    """
    params.zero_grad()
    out = f(params)
    if not np.isfinite(out.data):
        raise GradCheckError(f"function produced non-finite value {out.data!r}")
    out.backward()
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }
    params.zero_grad()

    def evaluate() -> float:
        value = f(params).item()
        if not math.isfinite(value):
            raise GradCheckError(f"function produced non-finite value {value!r}")
        return value

    worst = 0.0
    for name, t in params.items():
        flat = t.data.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        if flat.size <= max_coords_per_tensor:
            coords = range(flat.size)
        else:
            order = np.argsort(-np.abs(grad_flat), kind="stable")
            coords = sorted(order[:max_coords_per_tensor].tolist())
        for i in coords:
            original = flat[i]
            flat[i] = original + h
            f_plus = evaluate()
            flat[i] = original - h
            f_minus = evaluate()
            flat[i] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(grad_flat[i])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
