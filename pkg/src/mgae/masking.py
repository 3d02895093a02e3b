"""Split training edges into masked targets and reserved encoder input."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateMaskError
from .graph import canonicalize

SCHEMES = ("undirected", "directed")


@dataclass(frozen=True)
class MaskSplit:
    """Masked and reserved arcs (directed ``(src, dst)`` rows)."""

    masked: np.ndarray
    reserved: np.ndarray
    scheme: str
    ratio: float
    seed: int | None = None

    def targets(self) -> np.ndarray:
        """Ordered pairs the decoder is trained to reconstruct.

        Under the undirected scheme each masked edge appears once as
        ``(u, v)`` with ``u < v``; under the directed scheme every masked arc
        is its own target.
        """
        if self.scheme == "undirected":
            keep = self.masked[:, 0] < self.masked[:, 1]
            return self.masked[keep]
        return self.masked


def _generator(rng) -> tuple[np.random.Generator, int | None]:
    if isinstance(rng, np.random.Generator):
        return rng, None
    return np.random.default_rng(rng), rng


def _check_ratio(ratio: float) -> float:
    ratio = float(ratio)
    if not 0.0 < ratio < 1.0:
        raise ConfigError(f"mask ratio must lie in (0, 1), got {ratio}")
    return ratio


def _both_directions(pairs: np.ndarray) -> np.ndarray:
    return np.concatenate([pairs, pairs[:, ::-1]], axis=0)


def mask_undirected(train_edges, ratio: float, rng) -> MaskSplit:
    """Mask ``floor(ratio * |E|)`` whole undirected edges (both arcs each)."""
    ratio = _check_ratio(ratio)
    gen, seed = _generator(rng)
    edges = canonicalize(train_edges)
    count = math.floor(ratio * len(edges))
    if count == 0:
        raise DegenerateMaskError(f"ratio {ratio} masks no edge out of {len(edges)}")
    pick = np.zeros(len(edges), dtype=bool)
    pick[gen.choice(len(edges), size=count, replace=False)] = True
    return MaskSplit(_both_directions(edges[pick]), _both_directions(edges[~pick]),
                     "undirected", ratio, seed)


def mask_directed(train_edges, ratio: float, rng) -> MaskSplit:
    """Mask ``floor(ratio * 2|E|)`` arcs chosen independently of their reverse."""
    ratio = _check_ratio(ratio)
    gen, seed = _generator(rng)
    arcs = _both_directions(canonicalize(train_edges))
    count = math.floor(ratio * len(arcs))
    if count == 0:
        raise DegenerateMaskError(f"ratio {ratio} masks no arc out of {len(arcs)}")
    pick = np.zeros(len(arcs), dtype=bool)
    pick[gen.choice(len(arcs), size=count, replace=False)] = True
    return MaskSplit(arcs[pick], arcs[~pick], "directed", ratio, seed)


def mask_edges(train_edges, ratio: float, scheme: str, rng) -> MaskSplit:
    if scheme == "undirected":
        return mask_undirected(train_edges, ratio, rng)
    if scheme == "directed":
        return mask_directed(train_edges, ratio, rng)
    raise ConfigError(f"unknown mask scheme {scheme!r}; expected one of {SCHEMES}")


def epoch_generator(run_seed: int, epoch: int) -> np.random.Generator:
    """Independent stream for one epoch, derived from the run seed."""
    return np.random.default_rng([int(run_seed), int(epoch)])


def write_mask(path, split: MaskSplit) -> None:
    """Debug dump: one arc per line with a ``masked`` 0/1 column."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("src\tdst\tmasked\n")
        for flag, arcs in ((1, split.masked), (0, split.reserved)):
            for u, v in arcs:
                fh.write(f"{u}\t{v}\t{flag}\n")
