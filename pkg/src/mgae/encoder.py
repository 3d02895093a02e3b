"""K-layer message-passing encoders over the reserved arcs.

Propagation graphs store *incoming* arcs: row ``v`` of the CSR lists every
``u`` with an arc ``u -> v``, so node ``v`` aggregates messages from exactly
those ``u``.  For a symmetric arc set this is the ordinary adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DimensionError
from .graph import CsrGraph, build_csr, canonicalize
from .tensor import (Parameter, Tensor, add, glorot_uniform, matmul, relu, slice_rows,
                     sparse_matmul)

ARCHS = ("gcn", "sage")

# Dense inputs sparser than this are multiplied as scipy CSR.
SPARSE_INPUT_DENSITY = 0.25


@dataclass(frozen=True)
class EncoderConfig:
    arch: str = "gcn"
    dims: tuple[int, ...] = (128, 128)

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown encoder {self.arch!r}; expected one of {ARCHS}")
        if len(self.dims) < 1 or any(int(d) < 1 for d in self.dims):
            raise ConfigError(f"encoder needs at least one layer of positive width, got {self.dims}")

    @classmethod
    def uniform(cls, arch: str = "gcn", layers: int = 2, dim: int = 128) -> EncoderConfig:
        if layers < 1:
            raise ConfigError(f"layer count must be >= 1, got {layers}")
        return cls(arch, (int(dim),) * int(layers))

    @property
    def layers(self) -> int:
        return len(self.dims)

    @property
    def dim(self) -> int:
        return self.dims[-1]


def reserved_graph(n: int, arcs) -> CsrGraph:
    """Incoming-arc CSR for a set of directed ``(src, dst)`` arcs."""
    arcs = np.asarray(arcs, dtype=np.int64).reshape(-1, 2)
    return build_csr(n, arcs[:, ::-1], symmetric=False)


def full_graph(n: int, edges) -> CsrGraph:
    """Symmetric CSR over undirected edges (no mask)."""
    return build_csr(n, canonicalize(edges), symmetric=True)


@dataclass(frozen=True)
class GcnCoefficients:
    """Normalised weights: ``arc[i]`` scales the message ``targets[i] -> row``."""

    arc: np.ndarray
    self_loop: np.ndarray


def normalize_gcn(graph: CsrGraph) -> GcnCoefficients:
    """Symmetric normalisation with one self-loop per node.

    Degrees count reserved arcs into a node; the arc ``u -> v`` gets
    ``1 / sqrt((deg v + 1)(deg u + 1))`` and the self-loop ``1 / (deg v + 1)``.
    """
    deg = graph.degree().astype(np.float64)
    dst = graph.sources()
    src = graph.targets
    return GcnCoefficients(1.0 / np.sqrt((deg[dst] + 1.0) * (deg[src] + 1.0)), 1.0 / (deg + 1.0))


def gcn_operator(graph: CsrGraph) -> sp.csr_matrix:
    coef = normalize_gcn(graph)
    n = graph.n
    rows = np.concatenate([graph.sources(), np.arange(n)])
    cols = np.concatenate([graph.targets, np.arange(n)])
    vals = np.concatenate([coef.arc, coef.self_loop])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def mean_operator(graph: CsrGraph) -> sp.csr_matrix:
    """Row-stochastic neighbour mean; rows of isolated nodes are zero."""
    deg = graph.degree()
    with np.errstate(divide="ignore"):
        inv = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 0.0)
    data = np.repeat(inv, deg)
    return sp.csr_matrix((data, graph.targets, graph.offsets), shape=(graph.n, graph.n))


def prepare_input(x):
    """Tensors pass through; sparse-looking dense arrays become CSR constants."""
    if isinstance(x, Tensor) or sp.issparse(x):
        return x
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"features must be a matrix, got shape {arr.shape}")
    if arr.size and np.count_nonzero(arr) / arr.size < SPARSE_INPUT_DENSITY:
        return sp.csr_matrix(arr)
    return Tensor(arr)


def _input_shape(x) -> tuple[int, int]:
    return x.shape if sp.issparse(x) else x.value.shape


def _times(h, w) -> Tensor:
    return sparse_matmul(h, w) if sp.issparse(h) else matmul(h, w)


class Encoder:
    """Holds the per-layer weights ``W^(1..K)``."""

    def __init__(self, config: EncoderConfig, in_dim: int, rng: np.random.Generator):
        self.config = config
        self.in_dim = int(in_dim)
        self.weights: list[Parameter] = []
        prev = self.in_dim
        for k, width in enumerate(config.dims, start=1):
            fan_in = 2 * prev if config.arch == "sage" else prev
            self.weights.append(Parameter(glorot_uniform(fan_in, width, rng), f"enc.W{k}"))
            prev = width

    def parameters(self) -> list[Parameter]:
        return list(self.weights)

    def operator(self, graph: CsrGraph) -> sp.csr_matrix:
        return gcn_operator(graph) if self.config.arch == "gcn" else mean_operator(graph)

    def forward(self, graph: CsrGraph, x, operator: sp.csr_matrix | None = None) -> list[Tensor]:
        """All ``K`` layer outputs; ReLU after every layer but the last."""
        x = prepare_input(x)
        rows, cols = _input_shape(x)
        if rows != graph.n:
            raise DimensionError(f"features have {rows} rows for a graph of {graph.n} nodes")
        if cols != self.in_dim:
            raise DimensionError(f"features have {cols} columns, W1 expects {self.in_dim}")
        op = self.operator(graph) if operator is None else operator
        stack: list[Tensor] = []
        h = x
        last = len(self.weights) - 1
        for k, w in enumerate(self.weights):
            if self.config.arch == "gcn":
                out = sparse_matmul(op, _times(h, w))
            else:
                half = w.rows // 2
                own = _times(h, slice_rows(w, 0, half))
                neigh = sparse_matmul(op, _times(h, slice_rows(w, half, w.rows)))
                out = add(own, neigh)
            h = relu(out) if k < last else out
            stack.append(h)
        return stack


def gcn_forward(graph: CsrGraph, x, encoder: Encoder) -> list[Tensor]:
    if encoder.config.arch != "gcn":
        raise ConfigError("gcn_forward called with a non-GCN encoder")
    return encoder.forward(graph, x)


def sage_forward(graph: CsrGraph, x, encoder: Encoder) -> list[Tensor]:
    if encoder.config.arch != "sage":
        raise ConfigError("sage_forward called with a non-SAGE encoder")
    return encoder.forward(graph, x)


def encode_full_graph(edges, x, encoder: Encoder, n: int | None = None) -> list[Tensor]:
    """Encode over every given undirected edge, ignoring any training mask."""
    rows = _input_shape(prepare_input(x))[0] if n is None else n
    return encoder.forward(full_graph(rows, edges), x)


def stack_values(stack) -> list[np.ndarray]:
    return [s.value if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64) for s in stack]
