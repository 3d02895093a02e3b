"""The assembled autoencoder: input features, encoder and decoder weights."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .decoder import build_decoder, score_batch, score_symmetric
from .encoder import Encoder, EncoderConfig, full_graph, prepare_input, stack_values
from .errors import DimensionError
from .graph import CsrGraph, FeatureMatrix
from .tensor import Parameter, Tensor


class MGAE:
    """Masked graph autoencoder parameters and forward passes.

    ``features`` is either a fixed attribute matrix or, when
    ``features.learned`` is set, the initial value of a trainable table.
    """

    def __init__(self, n: int, features: FeatureMatrix, *, arch: str = "gcn", layers: int = 2,
                 dim: int = 128, hidden: int | None = None, decoder: str = "cross",
                 rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        values = np.asarray(features.values, dtype=np.float64)
        if values.shape[0] != n:
            raise DimensionError(f"{values.shape[0]} feature rows for {n} nodes")
        self.n = int(n)
        self.learned_features = bool(features.learned)
        self.feature_param: Parameter | None = None
        if self.learned_features:
            self.feature_param = Parameter(values, "feat.X")
            self._input = self.feature_param
        else:
            self._input = prepare_input(values)
        self.encoder = Encoder(EncoderConfig.uniform(arch, layers, dim), values.shape[1], rng)
        self.decoder = build_decoder(decoder, dim, layers, hidden, rng)

    @property
    def in_dim(self) -> int:
        return self.encoder.in_dim

    @property
    def input(self) -> Tensor | sp.csr_matrix:
        return self._input

    def parameters(self) -> list[Parameter]:
        params = self.encoder.parameters() + self.decoder.parameters()
        if self.feature_param is not None:
            params.insert(0, self.feature_param)
        return params

    def encode(self, graph: CsrGraph, operator=None) -> list[Tensor]:
        return self.encoder.forward(graph, self._input, operator)

    def embed(self, edges) -> list[np.ndarray]:
        """Layer outputs over the unmasked graph spanned by ``edges``."""
        return stack_values(self.encode(full_graph(self.n, edges)))

    def score(self, stack, pairs, symmetric: bool = False) -> np.ndarray:
        fn = score_symmetric if symmetric else score_batch
        return fn(stack, pairs, self.decoder)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.parameters()}
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise DimensionError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, p in params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.value.shape:
                raise DimensionError(f"{name}: stored shape {value.shape} != model shape {p.value.shape}")
            p.value = np.array(value, dtype=np.float64, order="C")
            p.zero_grad()
