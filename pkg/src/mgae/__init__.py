"""Masked graph autoencoder in plain numpy."""

__version__ = "0.1.0"

from .encoder import Encoder, EncoderConfig, encode_full_graph
from .graph import EdgeSplit, FeatureMatrix, build_csr, load_edge_list, load_features, split_edges
from .masking import MaskSplit, mask_directed, mask_undirected
from .model import MGAE
from .training import TrainConfig, fit

__all__ = [
    "Encoder", "EncoderConfig", "encode_full_graph", "EdgeSplit", "FeatureMatrix", "build_csr",
    "load_edge_list", "load_features", "split_edges", "MaskSplit", "mask_directed",
    "mask_undirected", "MGAE", "TrainConfig", "fit",
]
