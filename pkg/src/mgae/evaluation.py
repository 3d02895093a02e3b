"""Link-prediction metrics and node classification on learned embeddings."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, StratificationError


def _scores(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ContractError(f"{name} must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite scores")
    return arr


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their positions."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    starts = np.flatnonzero(np.r_[True, sorted_vals[1:] != sorted_vals[:-1]])
    ends = np.r_[starts[1:], len(values)]
    ranks = np.empty(len(values))
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def auc(pos_scores, neg_scores) -> float:
    """Probability that a random positive outscores a random negative (ties 1/2)."""
    pos = _scores(pos_scores, "pos_scores")
    neg = _scores(neg_scores, "neg_scores")
    ranks = _average_ranks(np.concatenate([pos, neg]))
    # Doubled ranks are integers, so the numerator below is computed exactly.
    doubled = int(np.rint(2.0 * ranks[:len(pos)]).astype(np.int64).sum())
    wins2 = doubled - len(pos) * (len(pos) + 1)
    return (wins2 / 2.0) / (len(pos) * len(neg))


def average_precision(pos_scores, neg_scores) -> float:
    """Mean precision at each positive in the descending ranking.

    Tied scores place negatives before positives, so ties never help.
    """
    pos = _scores(pos_scores, "pos_scores")
    neg = _scores(neg_scores, "neg_scores")
    scores = np.concatenate([pos, neg])
    is_pos = np.r_[np.ones(len(pos), dtype=bool), np.zeros(len(neg), dtype=bool)]
    order = np.lexsort((is_pos, -scores))
    hits = np.cumsum(is_pos[order])
    at = np.flatnonzero(is_pos[order])
    precisions = hits[at] / (at + 1.0)
    return math.fsum(precisions.tolist()) / len(pos)


def hits_at_n(pos_scores, neg_scores, n: int) -> float:
    """Fraction of positives strictly above the ``n``-th best negative."""
    if n < 1:
        raise ContractError(f"N must be >= 1, got {n}")
    pos = _scores(pos_scores, "pos_scores")
    neg = np.asarray(neg_scores, dtype=np.float64).ravel()
    if len(neg) < n:
        raise ContractError(f"Hits@{n} needs at least {n} negatives, got {len(neg)}")
    threshold = np.sort(neg)[::-1][n - 1]
    return float(np.count_nonzero(pos > threshold)) / len(pos)


def node_readout(stack) -> np.ndarray:
    """Per-node concatenation of every layer, ordered by layer."""
    layers = [np.asarray(getattr(s, "value", s), dtype=np.float64) for s in stack]
    return np.concatenate(layers, axis=1)


# ------------------------------------------------------------ classification


def stratified_folds(labels, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per labelled node, dealt round-robin within each shuffled class."""
    labels = np.asarray(labels)
    if folds < 2:
        raise ContractError(f"cross-validation needs at least 2 folds, got {folds}")
    out = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        if len(idx) < 2:
            raise StratificationError(f"class {cls} has {len(idx)} member(s); a training fold would miss it")
        idx = idx[rng.permutation(len(idx))]
        out[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return out


@dataclass
class LinearSVM:
    """One-vs-rest linear SVM: L2-regularised hinge loss, subgradient descent.

    The returned weights are the average of the second half of the iterates,
    which smooths the non-differentiable objective.
    """

    reg: float = 1e-3
    iters: int = 300
    lr: float = 0.1
    classes_: np.ndarray = field(default=None, repr=False)
    weights_: np.ndarray = field(default=None, repr=False)
    bias_: np.ndarray = field(default=None, repr=False)

    def fit(self, x: np.ndarray, y: np.ndarray) -> LinearSVM:
        x = np.asarray(x, dtype=np.float64)
        self.classes_ = np.unique(y)
        targets = np.where(y[:, None] == self.classes_[None, :], 1.0, -1.0)
        m, dim = x.shape
        w = np.zeros((dim, len(self.classes_)))
        b = np.zeros(len(self.classes_))
        w_avg = np.zeros_like(w)
        b_avg = np.zeros_like(b)
        start = self.iters // 2
        for t in range(1, self.iters + 1):
            margins = targets * (x @ w + b)
            active = (margins < 1.0) * targets
            grad_w = self.reg * w - x.T @ active / m
            grad_b = -active.sum(axis=0) / m
            step = self.lr / math.sqrt(t)
            w -= step * grad_w
            b -= step * grad_b
            if t > start:
                w_avg += w
                b_avg += b
        count = self.iters - start
        self.weights_ = w_avg / count
        self.bias_ = b_avg / count
        return self

    def decision_function(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.weights_ + self.bias_

    def predict(self, x) -> np.ndarray:
        return self.classes_[np.argmax(self.decision_function(x), axis=1)]


def standardize(train: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (train - mean) / std, (test - mean) / std


@dataclass
class CVResult:
    mean: float
    std: float
    fold_accuracies: list[float]
    repeat_means: list[float]


def classify_cv(readout, labels, folds: int = 5, seeds=range(10), *, reg: float = 1e-3,
                iters: int = 300, lr: float = 0.1) -> CVResult:
    """Stratified ``folds``-fold accuracy of :class:`LinearSVM`, repeated per seed.

    Nodes labelled ``-1`` are ignored.  ``mean`` and ``std`` are taken over
    the per-repeat mean accuracies.
    """
    x = np.asarray(readout, dtype=np.float64)
    labels = np.asarray(labels)
    keep = labels >= 0
    x, y = x[keep], labels[keep]
    fold_acc: list[float] = []
    repeat_means: list[float] = []
    for seed in seeds:
        assign = stratified_folds(y, folds, np.random.default_rng(seed))
        accs = []
        for f in range(folds):
            test = assign == f
            xtr, xte = standardize(x[~test], x[test])
            clf = LinearSVM(reg=reg, iters=iters, lr=lr).fit(xtr, y[~test])
            accs.append(float(np.mean(clf.predict(xte) == y[test])))
        fold_acc.extend(accs)
        repeat_means.append(float(np.mean(accs)))
    return CVResult(float(np.mean(repeat_means)), float(np.std(repeat_means)), fold_acc, repeat_means)


# ------------------------------------------------------------------- reports


@dataclass
class MetricsReport:
    task: str
    metrics: dict[str, float]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.metrics.items():
            if name.startswith(("auc", "ap", "hits@", "accuracy")) and not 0.0 <= value <= 1.0:
                raise ContractError(f"metric {name}={value} outside [0, 1]")

    def to_csv(self) -> str:
        lines = [f"# task={self.task}"]
        lines += [f"# {k}={v}" for k, v in self.metadata.items()]
        lines.append("metric,value")
        lines += [f"{k},{v!r}" for k, v in self.metrics.items()]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> MetricsReport:
        meta: dict[str, str] = {}
        metrics: dict[str, float] = {}
        for line in text.splitlines():
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
            elif line and line != "metric,value":
                key, _, value = line.partition(",")
                metrics[key] = float(value)
        task = meta.pop("task", "")
        return cls(task, metrics, meta)


def link_prediction_report(pos_scores, neg_scores, hits: tuple[int, ...] = ()) -> dict[str, float]:
    metrics = {"auc": auc(pos_scores, neg_scores), "ap": average_precision(pos_scores, neg_scores)}
    for n in hits:
        metrics[f"hits@{n}"] = hits_at_n(pos_scores, neg_scores, n)
    return metrics
