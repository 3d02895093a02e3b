"""Edge scoring from per-layer node embeddings.

For an ordered pair ``(v, u)`` the cross-correlation representation is the
concatenation of the ``K * K`` element-wise products ``h_v^(k) * h_u^(j)``,
``k`` outer and ``j`` inner, so block ``(k, j)`` starts at column
``(k * K + j) * d``.  A two-layer ReLU MLP maps it to one raw score.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, RangeError
from .tensor import (Parameter, Tensor, add, concat_cols, gather_rows, glorot_uniform,
                     hadamard, matmul, relu, rowwise_matmul)

DECODERS = ("cross", "inner")


def _check_stack(stack) -> tuple[int, int]:
    if len(stack) < 1:
        raise DimensionError("empty layer stack")
    shapes = {s.shape for s in stack}
    if len(shapes) != 1:
        raise DimensionError(f"cross-correlation needs equal layer widths, got {sorted(shapes)}")
    n, d = next(iter(shapes))
    return n, d


def cross_correlate(stack, v: int, u: int) -> np.ndarray:
    """Representation of the pair ``(v, u)``: length ``d * K**2``."""
    layers = [np.asarray(s.value if isinstance(s, Tensor) else s, dtype=np.float64) for s in stack]
    n, _ = _check_stack(layers)
    if not (0 <= v < n and 0 <= u < n):
        raise RangeError(f"node ids ({v}, {u}) outside [0, {n})")
    return np.concatenate([hv[v] * hu[u] for hv in layers for hu in layers])


def edge_representations(stack, heads, tails) -> Tensor:
    """Differentiable ``(P, d * K**2)`` batch of cross-correlations."""
    n, _ = _check_stack([s.value if isinstance(s, Tensor) else np.asarray(s) for s in stack])
    heads = np.asarray(heads, dtype=np.int64)
    tails = np.asarray(tails, dtype=np.int64)
    if heads.shape != tails.shape:
        raise DimensionError("heads and tails must have the same length")
    if heads.size and (min(heads.min(), tails.min()) < 0 or max(heads.max(), tails.max()) >= n):
        raise RangeError(f"node id outside [0, {n})")
    hv = [gather_rows(s, heads) for s in stack]
    hu = [gather_rows(s, tails) for s in stack]
    return concat_cols([hadamard(a, b) for a in hv for b in hu])


class CrossCorrelationDecoder:
    """MLP ``d*K^2 -> hidden -> 1`` with biases and a ReLU hidden layer."""

    kind = "cross"

    def __init__(self, dim: int, layers: int, hidden: int | None, rng: np.random.Generator):
        self.dim = int(dim)
        self.layers = int(layers)
        self.hidden = int(hidden or dim)
        width = self.in_width
        self.w1 = Parameter(glorot_uniform(width, self.hidden, rng), "dec.W1")
        self.b1 = Parameter(np.zeros((1, self.hidden)), "dec.b1")
        self.w2 = Parameter(glorot_uniform(self.hidden, 1, rng), "dec.W2")
        self.b2 = Parameter(np.zeros((1, 1)), "dec.b2")

    @property
    def in_width(self) -> int:
        return self.dim * self.layers ** 2

    def parameters(self) -> list[Parameter]:
        return [self.w1, self.b1, self.w2, self.b2]

    def mlp(self, rep) -> Tensor:
        return add(matmul(relu(add(matmul(rep, self.w1), self.b1)), self.w2), self.b2)

    def forward(self, stack, heads, tails) -> Tensor:
        """Raw ``(P, 1)`` scores, recorded for backpropagation."""
        return self.mlp(edge_representations(stack, heads, tails))

    def score_rows(self, reps: np.ndarray) -> np.ndarray:
        """Scores of plain representation rows; row ``i`` depends on ``reps[i]`` only."""
        reps = np.asarray(reps, dtype=np.float64)
        if reps.ndim == 1:
            reps = reps.reshape(1, -1)
        if reps.shape[1] != self.in_width:
            raise DimensionError(f"representation width {reps.shape[1]} != decoder input {self.in_width}")
        hidden = np.maximum(rowwise_matmul(reps, self.w1.value) + self.b1.value, 0.0)
        return (rowwise_matmul(hidden, self.w2.value) + self.b2.value)[:, 0]


class InnerProductDecoder:
    """Ablation baseline: ``<h_v^(K), h_u^(K)>`` with no parameters."""

    kind = "inner"

    def __init__(self, dim: int, layers: int, *_args):
        self.dim = int(dim)
        self.layers = int(layers)

    def parameters(self) -> list[Parameter]:
        return []

    def forward(self, stack, heads, tails) -> Tensor:
        last = stack[-1]
        prod = hadamard(gather_rows(last, heads), gather_rows(last, tails))
        return matmul(prod, np.ones((prod.cols, 1)))

    def score_pairs(self, stack, pairs) -> np.ndarray:
        last = np.asarray(stack[-1].value if isinstance(stack[-1], Tensor) else stack[-1])
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return np.einsum("ij,ij->i", last[pairs[:, 0]], last[pairs[:, 1]], optimize=False)


def build_decoder(kind: str, dim: int, layers: int, hidden: int | None, rng: np.random.Generator):
    if kind == "cross":
        return CrossCorrelationDecoder(dim, layers, hidden, rng)
    if kind == "inner":
        return InnerProductDecoder(dim, layers)
    raise DimensionError(f"unknown decoder {kind!r}; expected one of {DECODERS}")


def score_edge(rep, decoder: CrossCorrelationDecoder) -> float:
    return float(decoder.score_rows(rep)[0])


def score_batch(stack, pairs, decoder) -> np.ndarray:
    """Raw scores for ``pairs`` (rows ``(v, u)``), in input order."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if isinstance(decoder, InnerProductDecoder):
        return decoder.score_pairs(stack, pairs)
    layers = [np.asarray(s.value if isinstance(s, Tensor) else s, dtype=np.float64) for s in stack]
    n, _ = _check_stack(layers)
    if len(pairs) == 0:
        return np.zeros(0)
    if pairs.min() < 0 or pairs.max() >= n:
        raise RangeError(f"node id outside [0, {n})")
    reps = np.concatenate([hv[pairs[:, 0]] * hu[pairs[:, 1]] for hv in layers for hu in layers], axis=1)
    return decoder.score_rows(reps)


def score_symmetric(stack, pairs, decoder) -> np.ndarray:
    """Average of the scores of ``(v, u)`` and ``(u, v)``."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return 0.5 * (score_batch(stack, pairs, decoder) + score_batch(stack, pairs[:, ::-1], decoder))
