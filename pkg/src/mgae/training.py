"""Per-epoch masking, reconstruction loss, Adam updates and early stopping."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .decoder import DECODERS
from .encoder import ARCHS, full_graph, reserved_graph
from .errors import ConfigError, DimensionError, NumericError
from .evaluation import auc
from .graph import EdgeSplit, FeatureMatrix, NegativeSampler, canonicalize, edge_keys
from .masking import SCHEMES, MaskSplit, epoch_generator, mask_edges
from .model import MGAE
from .tensor import AdamState, adam_step, backward, positive_first_nll, reshape, zero_grads


@dataclass(frozen=True)
class TrainConfig:
    mask_ratio: float = 0.7
    scheme: str = "undirected"
    layers: int = 2
    dim: int = 128
    arch: str = "gcn"
    epochs: int = 200
    patience: int = 50
    negatives: int = 20
    lr: float = 0.01
    batch_size: int = 512
    seed: int = 0
    remask_per_epoch: bool = True
    hidden: int | None = None
    decoder: str = "cross"
    debug: bool = False

    def __post_init__(self):
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigError(f"mask ratio must lie in (0, 1), got {self.mask_ratio}")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown mask scheme {self.scheme!r}")
        if self.arch not in ARCHS:
            raise ConfigError(f"unknown encoder {self.arch!r}")
        if self.decoder not in DECODERS:
            raise ConfigError(f"unknown decoder {self.decoder!r}")
        for name in ("layers", "dim", "epochs", "negatives", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.patience < 0:
            raise ConfigError(f"patience must be >= 0, got {self.patience}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.hidden is not None and self.hidden < 1:
            raise ConfigError(f"hidden width must be >= 1, got {self.hidden}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def sampled_softmax_loss(pos_score: float, neg_scores) -> float:
    """``-log(e^pos / (e^pos + sum_q e^neg_q))`` with max subtraction."""
    scores = np.concatenate([[float(pos_score)], np.asarray(neg_scores, dtype=np.float64).ravel()])
    if not np.all(np.isfinite(scores)):
        raise NumericError("sampled_softmax_loss received a non-finite score")
    top = scores.max()
    return float(np.log(np.exp(scores - top).sum()) - (scores[0] - top))


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    val_auc: float
    elapsed_ms: float


@dataclass
class TrainState:
    epoch: int = 0
    best_metric: float = -math.inf
    best_epoch: int = 0
    epochs_since_best: int = 0
    best_params: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    history: list[EpochRecord] = field(default_factory=list)


@dataclass
class EpochResult:
    loss: float
    mask: MaskSplit


def batch_loss(model: MGAE, graph, heads, tails, operator=None):
    """Mean sampled-softmax loss of one minibatch as a recorded 1x1 tensor.

    ``tails`` is ``(B, 1 + Q)``: column 0 the true tail of each head, the
    rest its corrupt tails.
    """
    heads = np.asarray(heads, dtype=np.int64)
    tails = np.asarray(tails, dtype=np.int64)
    if tails.ndim != 2 or tails.shape[0] != len(heads):
        raise DimensionError(f"tails must be ({len(heads)}, 1+Q), got {tails.shape}")
    width = tails.shape[1]
    stack = model.encode(graph, operator)
    scores = model.decoder.forward(stack, np.repeat(heads, width), tails.reshape(-1))
    return positive_first_nll(reshape(scores, len(heads), width))


def train_epoch(model: MGAE, train_edges, optimizer: AdamState, config: TrainConfig,
                rng: np.random.Generator, *, mask: MaskSplit | None = None,
                sampler: NegativeSampler | None = None) -> EpochResult:
    """One pass of mask, encode reserved arcs, score masked pairs, update.

    Masked pairs are visited in shuffled minibatches.  Each batch re-encodes
    the reserved graph with the current weights, draws ``config.negatives``
    corrupt tails per head and takes one Adam step on the mean loss.
    Returns the mean loss per masked pair.
    """
    train_edges = canonicalize(train_edges)
    if mask is None:
        mask = mask_edges(train_edges, config.mask_ratio, config.scheme, rng)
    if sampler is None:
        sampler = NegativeSampler(full_graph(model.n, train_edges))
    graph = reserved_graph(model.n, mask.reserved)
    operator = model.encoder.operator(graph)
    targets = mask.targets()
    params = model.parameters()
    order = rng.permutation(len(targets))
    q = config.negatives
    total = 0.0
    for start in range(0, len(targets), config.batch_size):
        batch = targets[order[start:start + config.batch_size]]
        heads = batch[:, 0]
        tails = np.concatenate([batch[:, 1:2], sampler.sample(heads, q, rng)], axis=1)
        zero_grads(params)
        loss = batch_loss(model, graph, heads, tails, operator)
        backward(loss)
        adam_step(params, optimizer)
        total += loss.item() * len(batch)
    return EpochResult(total / len(targets), mask)


def check_leakage(mask: MaskSplit, split: EdgeSplit) -> None:
    """Raise if any validation or test pair reached the encoder or the loss."""
    n = split.num_nodes
    held_out = np.concatenate([split.valid, split.test, split.valid_neg, split.test_neg])
    held = set(edge_keys(canonicalize(held_out), n).tolist())
    for name, arcs in (("reserved", mask.reserved), ("masked", mask.masked)):
        keys = edge_keys(canonicalize(arcs), n).tolist()
        if held.intersection(keys):
            raise ConfigError(f"held-out edges leaked into the {name} set")


def validation_auc(model: MGAE, split: EdgeSplit, stack=None) -> float:
    if len(split.valid) == 0 or len(split.valid_neg) == 0:
        return math.nan
    stack = model.embed(split.train) if stack is None else stack
    return auc(model.score(stack, split.valid), model.score(stack, split.valid_neg))


def build_model(n: int, features: FeatureMatrix, config: TrainConfig) -> MGAE:
    return MGAE(n, features, arch=config.arch, layers=config.layers, dim=config.dim,
                hidden=config.hidden, decoder=config.decoder,
                rng=np.random.default_rng(config.seed))


@dataclass
class FitResult:
    model: MGAE
    state: TrainState


def fit(n: int, features: FeatureMatrix, split: EdgeSplit, config: TrainConfig,
        on_epoch=None) -> FitResult:
    """Train until ``patience`` epochs pass without a better validation AUC.

    The returned model carries the parameters of the best epoch.  Without
    validation edges the negative training loss is the selection metric.
    """
    if split.num_nodes != n:
        raise DimensionError(f"split covers {split.num_nodes} nodes, graph has {n}")
    model = build_model(n, features, config)
    optimizer = AdamState(lr=config.lr)
    sampler = NegativeSampler(full_graph(n, split.train))
    state = TrainState()
    fixed_mask: MaskSplit | None = None
    started = time.perf_counter()
    for epoch in range(1, config.epochs + 1):
        rng = epoch_generator(config.seed, epoch)
        result = train_epoch(model, split.train, optimizer, config, rng,
                             mask=None if config.remask_per_epoch else fixed_mask, sampler=sampler)
        fixed_mask = fixed_mask or result.mask
        if config.debug:
            check_leakage(result.mask, split)
        val = validation_auc(model, split)
        metric = -result.loss if math.isnan(val) else val
        record = EpochRecord(epoch, result.loss, val, (time.perf_counter() - started) * 1000.0)
        state.history.append(record)
        state.epoch = epoch
        if metric > state.best_metric:
            state.best_metric = metric
            state.best_epoch = epoch
            state.best_params = model.state_dict()
            state.epochs_since_best = 0
        else:
            state.epochs_since_best += 1
        if on_epoch is not None:
            on_epoch(record)
        if state.epochs_since_best >= config.patience:
            break
    model.load_state_dict(state.best_params)
    return FitResult(model, state)
