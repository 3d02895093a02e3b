"""Graph storage, ingestion, edge splitting and negative sampling.

Edges are ``(m, 2)`` int64 arrays of 0-based node ids.  An edge list in
canonical undirected form has ``u < v`` in every row, no duplicates, and rows
sorted lexicographically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, ParseError, RangeError, SamplingError

PARTITIONS = ("train", "valid", "test", "valid_neg", "test_neg")


def _as_pairs(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DimensionError(f"edges must have shape (m, 2), got {arr.shape}")
    return arr


def canonicalize(edges) -> np.ndarray:
    """Drop self-loops, orient ``u < v``, deduplicate and sort."""
    arr = _as_pairs(edges)
    arr = arr[arr[:, 0] != arr[:, 1]]
    if len(arr) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.sort(arr, axis=1), axis=0)


def edge_keys(edges, n: int) -> np.ndarray:
    """Unique integer key ``u * n + v`` per row, in row order."""
    arr = _as_pairs(edges)
    return arr[:, 0] * np.int64(n) + arr[:, 1]


@dataclass(frozen=True)
class EdgeList:
    """Canonical undirected edges plus what cleaning removed."""

    pairs: np.ndarray
    num_nodes: int
    self_loops_dropped: int = 0
    duplicates_merged: int = 0

    def __len__(self) -> int:
        return len(self.pairs)


def _parse_header(line: str) -> int | None:
    body = line.lstrip("#").strip()
    for sep in ("=", ":"):
        if sep in body:
            key, _, value = body.partition(sep)
            if key.strip().lower() in ("n", "nodes", "num_nodes"):
                try:
                    return int(value.strip())
                except ValueError:
                    return None
    return None


def load_edge_list(path, num_nodes: int | None = None) -> EdgeList:
    """Read a ``u<TAB>v`` file (any whitespace accepted) into canonical form.

    ``#`` lines are comments; a comment of the form ``# num_nodes=N`` declares
    the node count when ``num_nodes`` is not given.  Without either, the count
    is one past the largest id seen.
    """
    raw: list[tuple[int, int]] = []
    declared = num_nodes
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                if num_nodes is None and declared is None:
                    declared = _parse_header(stripped)
                continue
            tokens = stripped.split()
            if len(tokens) != 2:
                raise ParseError(f"{path}:{lineno}: expected two node ids, got {len(tokens)} tokens")
            try:
                u, v = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer node id in {stripped!r}") from None
            if u < 0 or v < 0:
                raise RangeError(f"{path}:{lineno}: negative node id in {stripped!r}")
            if declared is not None and (u >= declared or v >= declared):
                raise RangeError(f"{path}:{lineno}: node id >= declared node count {declared}")
            raw.append((u, v))
    arr = np.array(raw, dtype=np.int64).reshape(-1, 2)
    loops = int(np.count_nonzero(arr[:, 0] == arr[:, 1])) if len(arr) else 0
    pairs = canonicalize(arr)
    n = declared if declared is not None else (int(arr.max()) + 1 if len(arr) else 0)
    return EdgeList(pairs, n, loops, len(arr) - loops - len(pairs))


def write_edge_list(path, edges, num_nodes: int | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if num_nodes is not None:
            fh.write(f"# num_nodes={num_nodes}\n")
        for u, v in _as_pairs(edges):
            fh.write(f"{u}\t{v}\n")


@dataclass(frozen=True)
class FeatureMatrix:
    """Node attributes; ``learned`` marks a trainable embedding table."""

    values: np.ndarray
    learned: bool = False

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def learned_features(n: int, dim: int, rng: np.random.Generator) -> FeatureMatrix:
    """Initial values for a trainable ``n x dim`` embedding table."""
    limit = math.sqrt(6.0 / (n + dim)) if n + dim else 0.0
    return FeatureMatrix(rng.uniform(-limit, limit, size=(n, dim)), learned=True)


def _scan_csv(path) -> None:
    with open(path, encoding="utf-8") as fh:
        width = None
        for row, line in enumerate(fh, start=1):
            cells = line.strip().split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ParseError(f"{path}: row {row} has {len(cells)} columns, expected {width}")
            for col, cell in enumerate(cells, start=1):
                try:
                    float(cell)
                except ValueError:
                    raise ParseError(f"{path}: unparsable value {cell!r} at row {row}, column {col}") from None


def load_features(path, n: int | None = None, *, learn_dim: int | None = None,
                  rng: np.random.Generator | None = None) -> FeatureMatrix:
    """Read a header-less CSV whose row ``i`` describes node ``i``.

    When ``path`` does not exist and ``learn_dim`` is given, a learnable
    ``n x learn_dim`` table is returned instead.
    """
    if path is None or not Path(path).exists():
        if learn_dim is not None:
            if n is None:
                raise ConfigError("learned features need a node count")
            return learned_features(n, learn_dim, rng or np.random.default_rng(0))
        raise FileNotFoundError(f"feature file not found: {path}")
    try:
        values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError:
        _scan_csv(path)
        raise
    if n is not None and values.shape[0] != n:
        raise DimensionError(f"{path}: {values.shape[0]} feature rows for {n} nodes")
    if not np.all(np.isfinite(values)):
        raise ParseError(f"{path}: non-finite feature values")
    return FeatureMatrix(values, learned=False)


def load_labels(path, n: int) -> np.ndarray:
    """Read ``node_id<TAB>class_id`` lines; unlabeled nodes get ``-1``."""
    labels = np.full(n, -1, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) != 2:
                raise ParseError(f"{path}:{lineno}: expected node_id and class_id")
            try:
                node, cls = int(tokens[0]), int(tokens[1])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer token in {stripped!r}") from None
            if not 0 <= node < n:
                raise ParseError(f"{path}:{lineno}: node id {node} outside [0, {n})")
            if cls < 0:
                raise ParseError(f"{path}:{lineno}: negative class id {cls}")
            labels[node] = cls
    return labels


# --------------------------------------------------------------------------- CSR


@dataclass(frozen=True)
class CsrGraph:
    """Row ``v`` of the structure lists ``targets[offsets[v]:offsets[v+1]]``."""

    n: int
    offsets: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if len(self.offsets) != self.n + 1 or self.offsets[0] != 0:
            raise DimensionError("offsets must have length n+1 and start at 0")
        if self.offsets[-1] != len(self.targets):
            raise DimensionError("offsets[n] must equal the number of targets")

    def degree(self) -> np.ndarray:
        return np.diff(self.offsets)

    def neighbors(self, v: int) -> np.ndarray:
        return self.targets[self.offsets[v]:self.offsets[v + 1]]

    def sources(self) -> np.ndarray:
        """Row id of every stored target, aligned with ``targets``."""
        return np.repeat(np.arange(self.n, dtype=np.int64), self.degree())

    def to_arcs(self) -> np.ndarray:
        return np.stack([self.sources(), self.targets], axis=1)

    @property
    def num_arcs(self) -> int:
        return len(self.targets)


def build_csr(n: int, edges, symmetric: bool = True) -> CsrGraph:
    """CSR over ``n`` nodes; each row sorted and duplicate-free.

    With ``symmetric`` each pair ``(u, v)`` is stored in both rows; otherwise
    only ``v`` is stored in row ``u``.
    """
    arr = _as_pairs(edges)
    if len(arr) and (arr.min() < 0 or arr.max() >= n):
        raise RangeError(f"node id out of range for a graph of {n} nodes")
    if symmetric:
        arr = np.concatenate([arr, arr[:, ::-1]], axis=0)
    if len(arr):
        arr = np.unique(arr, axis=0)
    counts = np.bincount(arr[:, 0], minlength=n) if len(arr) else np.zeros(n, dtype=np.int64)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return CsrGraph(n, offsets, arr[:, 1].astype(np.int64).copy())


# ------------------------------------------------------------------------- split


@dataclass(frozen=True)
class EdgeSplit:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    valid_neg: np.ndarray
    test_neg: np.ndarray
    num_nodes: int
    ratios: tuple[float, float, float] = (0.85, 0.05, 0.10)
    seed: int | None = None

    def all_positive(self) -> np.ndarray:
        return canonicalize(np.concatenate([self.train, self.valid, self.test], axis=0))

    def partition(self, name: str) -> np.ndarray:
        if name not in PARTITIONS:
            raise KeyError(name)
        return getattr(self, name)


def _check_ratios(ratios) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise ConfigError(f"split needs three ratios, got {len(ratios)}")
    r = tuple(float(x) for x in ratios)
    if r[0] <= 0 or r[1] < 0 or r[2] < 0:
        raise ConfigError(f"train ratio must be positive and others non-negative, got {r}")
    if abs(sum(r) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(r)}")
    return r


def sample_non_edges(count: int, n: int, forbidden_keys: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """``count`` distinct canonical pairs, none of whose keys is forbidden."""
    if count == 0:
        return np.zeros((0, 2), dtype=np.int64)
    available = n * (n - 1) // 2 - len(forbidden_keys)
    if count > available:
        raise SamplingError(f"cannot draw {count} non-edges from {available} candidates")
    taken = set(int(k) for k in forbidden_keys)
    out: list[tuple[int, int]] = []
    while len(out) < count:
        draws = rng.integers(0, n, size=(2 * (count - len(out)) + 8, 2))
        for u, v in draws:
            if u == v:
                continue
            if u > v:
                u, v = v, u
            key = int(u) * n + int(v)
            if key in taken:
                continue
            taken.add(key)
            out.append((int(u), int(v)))
            if len(out) == count:
                break
    return np.array(out, dtype=np.int64)


def split_edges(edges, ratios=(0.85, 0.05, 0.10), seed: int = 0,
                num_nodes: int | None = None) -> EdgeSplit:
    """Random train/valid/test partition of canonical edges.

    Valid and test sizes are ``floor(ratio * m)``; the remainder goes to
    train.  Negatives, one per valid/test positive, are distinct non-edges
    sampled once here so every model is scored against the same pairs.
    """
    r = _check_ratios(ratios)
    pairs = canonicalize(edges)
    n = num_nodes if num_nodes is not None else (int(pairs.max()) + 1 if len(pairs) else 0)
    m = len(pairs)
    n_valid = math.floor(r[1] * m)
    n_test = math.floor(r[2] * m)
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    valid = canonicalize(pairs[perm[:n_valid]])
    test = canonicalize(pairs[perm[n_valid:n_valid + n_test]])
    train = canonicalize(pairs[perm[n_valid + n_test:]])
    negs = sample_non_edges(n_valid + n_test, n, edge_keys(pairs, n), rng)
    return EdgeSplit(train, valid, test, negs[:n_valid], negs[n_valid:], n, r, seed)


def write_split(path, split: EdgeSplit) -> None:
    """Split manifest: TSV ``edge_u, edge_v, partition``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# num_nodes={split.num_nodes}\n")
        fh.write(f"# ratios={','.join(repr(x) for x in split.ratios)}\n")
        fh.write(f"# seed={split.seed}\n")
        fh.write("edge_u\tedge_v\tpartition\n")
        for name in PARTITIONS:
            for u, v in split.partition(name):
                fh.write(f"{u}\t{v}\t{name}\n")


def read_split(path) -> EdgeSplit:
    meta: dict[str, str] = {}
    parts: dict[str, list[tuple[int, int]]] = {name: [] for name in PARTITIONS}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                key, _, value = stripped.lstrip("#").strip().partition("=")
                meta[key.strip()] = value.strip()
                continue
            tokens = stripped.split("\t")
            if tokens == ["edge_u", "edge_v", "partition"]:
                continue
            if len(tokens) != 3 or tokens[2] not in parts:
                raise ParseError(f"{path}:{lineno}: malformed split row {stripped!r}")
            try:
                parts[tokens[2]].append((int(tokens[0]), int(tokens[1])))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-integer node id") from None
    if "num_nodes" not in meta:
        raise ParseError(f"{path}: missing '# num_nodes=' header")
    arrays = {k: np.array(v, dtype=np.int64).reshape(-1, 2) for k, v in parts.items()}
    ratios = tuple(float(x) for x in meta.get("ratios", "0.85,0.05,0.1").split(","))
    seed = meta.get("seed")
    return EdgeSplit(num_nodes=int(meta["num_nodes"]), ratios=ratios,
                     seed=None if seed in (None, "None") else int(seed), **arrays)


# ---------------------------------------------------------------- neg. sampling


def sample_negative_tails(u: int, count: int, n: int, exclude, rng: np.random.Generator) -> np.ndarray:
    """``count`` node ids drawn uniformly from the nodes outside ``exclude | {u}``.

    Draws are independent, so ids may repeat.
    """
    exclude = set(int(x) for x in exclude)
    if count < 0 or count >= n - len(exclude):
        raise SamplingError(f"need count < n - |exclude| = {n - len(exclude)}, got {count}")
    banned = exclude | {int(u)}
    if len(banned) >= n:
        raise SamplingError(f"node {u} has no admissible negative tails")
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        draws = rng.integers(0, n, size=count - filled)
        ok = draws[[int(z) not in banned for z in draws]]
        out[filled:filled + len(ok)] = ok
        filled += len(ok)
    return out


@dataclass
class NegativeSampler:
    """Vectorised tail corruption against a fixed adjacency.

    For each head ``v`` the tails are uniform over nodes that are neither
    ``v`` nor a neighbour of ``v`` in ``graph``.
    """

    graph: CsrGraph
    _keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._keys = np.sort(edge_keys(self.graph.to_arcs(), self.graph.n))

    def _forbidden(self, heads: np.ndarray, tails: np.ndarray) -> np.ndarray:
        keys = heads * np.int64(self.graph.n) + tails
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, max(len(self._keys) - 1, 0))
        hit = self._keys[pos] == keys if len(self._keys) else np.zeros_like(keys, dtype=bool)
        return hit | (heads == tails)

    def sample(self, heads, count: int, rng: np.random.Generator) -> np.ndarray:
        """``(len(heads), count)`` array of corrupt tails."""
        heads = np.asarray(heads, dtype=np.int64)
        n = self.graph.n
        deg = self.graph.degree()[heads] if len(heads) else np.zeros(0, dtype=np.int64)
        if len(heads) and np.any(deg + 1 >= n):
            raise SamplingError("a head is adjacent to every other node; no negatives exist")
        rep = np.repeat(heads, count)
        tails = rng.integers(0, n, size=rep.size)
        bad = self._forbidden(rep, tails)
        while np.any(bad):
            idx = np.flatnonzero(bad)
            tails[idx] = rng.integers(0, n, size=idx.size)
            bad[idx] = self._forbidden(rep[idx], tails[idx])
        return tails.reshape(len(heads), count)
