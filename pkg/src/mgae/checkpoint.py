"""Versioned binary checkpoints.

Layout: the magic ``MGAECKPT``, a little-endian ``uint32`` format version, a
``uint64`` header length, a UTF-8 JSON header, then every tensor's raw
little-endian float64 bytes in header order.  Writing the same model twice
gives identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import IntegrityError
from .graph import FeatureMatrix
from .model import MGAE
from .training import TrainConfig, build_model

MAGIC = b"MGAECKPT"
VERSION = 1


def array_digest(values) -> str:
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    h = hashlib.sha256(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()[:16]


@dataclass
class Checkpoint:
    config: TrainConfig
    tensors: dict[str, np.ndarray]
    meta: dict

    def build(self, features: FeatureMatrix | None = None) -> MGAE:
        """Recreate the model; fixed-attribute models need their features back."""
        n = int(self.meta["num_nodes"])
        if self.meta.get("learned_features"):
            features = FeatureMatrix(self.tensors["feat.X"], learned=True)
        elif features is None:
            raise IntegrityError("checkpoint was trained on fixed features; pass them in")
        elif array_digest(features.values) != self.meta.get("features_digest"):
            raise IntegrityError("feature matrix differs from the one the checkpoint was trained on")
        model = build_model(n, features, self.config)
        model.load_state_dict(self.tensors)
        return model


def save_checkpoint(path, model: MGAE, config: TrainConfig, meta: dict | None = None) -> None:
    state = model.state_dict()
    header = {
        "config": config.to_dict(),
        "config_digest": config.digest(),
        "meta": {
            "num_nodes": model.n,
            "in_dim": model.in_dim,
            "learned_features": model.learned_features,
            **({} if model.learned_features else {"features_digest": array_digest(model_features(model))}),
            **(meta or {}),
        },
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in state.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for value in state.values():
            fh.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def model_features(model: MGAE) -> np.ndarray:
    x = model.input
    return x.toarray() if hasattr(x, "toarray") else x.value


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint file")
    version, length = struct.unpack_from("<IQ", data, len(MAGIC))
    if version != VERSION:
        raise IntegrityError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + struct.calcsize("<IQ")
    header = json.loads(data[start:start + length].decode("utf-8"))
    config = TrainConfig.from_dict(header["config"])
    if config.digest() != header["config_digest"]:
        raise IntegrityError(f"{path}: config digest mismatch; the checkpoint was altered")
    offset = start + length
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise IntegrityError(f"{path}: truncated tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    if offset != len(data):
        raise IntegrityError(f"{path}: {len(data) - offset} trailing bytes")
    return Checkpoint(config, tensors, header["meta"])
