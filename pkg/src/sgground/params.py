"""Trainable parameter blocks, initialization and checkpoint persistence.

All weights use the row-vector convention (reps are rows, layers multiply on
the right), so a map from 3d to d is stored as a (3d, d) array.  Checkpoints
are a custom binary container (named float64 arrays plus a config
fingerprint) written deterministically, byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, apply_mlp, uniform_fan_in

CHECKPOINT_MAGIC = b"SGGCKPT1"


class CheckpointError(ValueError):
    pass


@dataclass
class ModelDims:
    d: int                       # shared representation width
    feature_dim: int             # proposal feature length (d + 4 geometry)
    hidden: int = 0              # 0 means 2 * d
    layers: int = 2
    share_layer_params: bool = False
    train_relation_reps: bool = False

    def __post_init__(self):
        if self.hidden <= 0:
            self.hidden = 2 * self.d
        if self.layers not in (1, 2):
            raise ValueError(f"layers must be 1 or 2, got {self.layers}")

    @property
    def param_layers(self) -> int:
        return 1 if self.share_layer_params else self.layers

    def to_dict(self):
        return {
            "d": self.d, "feature_dim": self.feature_dim, "hidden": self.hidden,
            "layers": self.layers, "share_layer_params": self.share_layer_params,
            "train_relation_reps": self.train_relation_reps,
        }


def _mlp_entries(rng, prefix, n_in, n_hidden, n_out):
    return [
        (f"{prefix}/w1", uniform_fan_in(rng, n_in, n_hidden)),
        (f"{prefix}/b1", np.zeros((1, n_hidden))),
        (f"{prefix}/w2", uniform_fan_in(rng, n_hidden, n_out)),
        (f"{prefix}/b2", np.zeros((1, n_out))),
    ]


@dataclass
class ModelParameters:
    dims: ModelDims
    arrays: dict = field(default_factory=dict)
    relation_tokens: tuple = ()   # row order of relation_embeddings, when trainable

    @classmethod
    def init(cls, dims: ModelDims, seed: int, provider=None, predicates=()) -> "ModelParameters":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xA11])))
        d, h = dims.d, dims.hidden
        entries = []
        entries += _mlp_entries(rng, "phi1", dims.feature_dim, h, d)
        entries += _mlp_entries(rng, "phi2", 12, h, d)
        entries.append(("W", uniform_fan_in(rng, 3 * d, d)))
        for layer in range(dims.param_layers):
            p = f"mp{layer}"
            for wname in ("W1", "W2", "W3", "W4"):
                entries.append((f"{p}/{wname}", uniform_fan_in(rng, d, d)))
            entries += _mlp_entries(rng, f"{p}/phi3", 3 * d, h, d)
            entries += _mlp_entries(rng, f"{p}/phi4", 2 * d, h, d)
            entries += _mlp_entries(rng, f"{p}/phi5", 3 * d, h, d)
            entries += _mlp_entries(rng, f"{p}/phi6", 2 * d, h, d)
        entries += _mlp_entries(rng, "fg", d, h, 1)
        entries += _mlp_entries(rng, "box", d, h, 4)
        relation_tokens = ()
        if dims.train_relation_reps:
            if provider is None or not predicates:
                raise ValueError("trainable relation reps need a provider and predicate list")
            relation_tokens = tuple(predicates)
            entries.append(("relation_embeddings", provider.embed_many(list(predicates))))
        return cls(dims=dims, arrays=dict(entries), relation_tokens=relation_tokens)

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def copy(self) -> "ModelParameters":
        return ModelParameters(dims=self.dims,
                               arrays={k: v.copy() for k, v in self.arrays.items()},
                               relation_tokens=self.relation_tokens)

    def bind(self, tape: Tape) -> "BoundParams":
        return BoundParams(self, {k: tape.leaf(v, trainable=True, name=k)
                                  for k, v in self.arrays.items()})


class BoundParams:
    """Tape leaves for every parameter array of one forward pass."""

    def __init__(self, params: ModelParameters, leaves: dict):
        self.params = params
        self.leaves = leaves

    def __getitem__(self, name):
        return self.leaves[name]

    def mlp(self, tape: Tape, prefix: str, x):
        return apply_mlp(tape, x, self.leaves[f"{prefix}/w1"], self.leaves[f"{prefix}/b1"],
                         self.leaves[f"{prefix}/w2"], self.leaves[f"{prefix}/b2"])

    def mp(self, layer: int, name: str):
        actual = 0 if self.params.dims.share_layer_params else layer
        return self.leaves[f"mp{actual}/{name}"]

    def mp_prefix(self, layer: int, name: str) -> str:
        actual = 0 if self.params.dims.share_layer_params else layer
        return f"mp{actual}/{name}"


def config_fingerprint(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_checkpoint(path, params: ModelParameters, fingerprint: str,
                    extra: dict | None = None) -> None:
    header = {
        "version": 1,
        "fingerprint": fingerprint,
        "dims": params.dims.to_dict(),
        "relation_tokens": list(params.relation_tokens),
        "extra": extra or {},
        "entries": [{"name": k, "shape": list(v.shape)} for k, v in params.arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for v in params.arrays.values():
            fh.write(np.ascontiguousarray(v, dtype=np.float64).tobytes())


def load_checkpoint(path):
    """Returns (ModelParameters, fingerprint, extra)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        if header.get("version") != 1:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')!r}")
        dims = ModelDims(**header["dims"])
        arrays = {}
        for entry in header["entries"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape))
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise CheckpointError(f"truncated checkpoint at entry {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
        trailing = fh.read(1)
        if trailing:
            raise CheckpointError("trailing bytes after final entry")
    params = ModelParameters(dims=dims, arrays=arrays,
                             relation_tokens=tuple(header.get("relation_tokens", ())))
    return params, header["fingerprint"], header["extra"]
