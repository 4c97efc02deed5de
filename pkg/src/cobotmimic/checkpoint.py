"""JSON model checkpoints with lossless float encoding.

Layout (version 1)::

    {
      "format": "cobotmimic-checkpoint",
      "version": 1,
      "spec": {"seed": int, "layers": [{"kind", "in_dim", "out_dim", "activation"}, ...]},
      "params": ["0x1.8p+1", ...],        # float.hex of the flat parameter vector
      "extras": {name: ["0x..", ...]},    # named float arrays (normalizers etc.), flattened
      "extras_shapes": {name: [dims]},
      "meta": {...}                       # free-form JSON: steps, final loss, config
    }
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .nn import ModelSpec, Network

FORMAT = "cobotmimic-checkpoint"
VERSION = 1


def encode_floats(values) -> list[str]:
    return [float(v).hex() for v in np.asarray(values, dtype=np.float64).ravel()]


def decode_floats(items) -> np.ndarray:
    return np.array([float.fromhex(s) for s in items], dtype=np.float64)


def checkpoint_dict(net: Network, meta: dict | None = None,
                    extras: dict[str, np.ndarray] | None = None) -> dict:
    extras = extras or {}
    return {
        "format": FORMAT,
        "version": VERSION,
        "spec": net.spec.to_dict(),
        "params": encode_floats(net.params),
        "extras": {k: encode_floats(v) for k, v in extras.items()},
        "extras_shapes": {k: list(np.shape(v)) for k, v in extras.items()},
        "meta": meta or {},
    }


def from_checkpoint_dict(d: dict):
    if d.get("format") != FORMAT:
        raise ValueError(f"not a {FORMAT} file")
    if d.get("version") != VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    net = Network(ModelSpec.from_dict(d["spec"]), decode_floats(d["params"]))
    extras = {k: decode_floats(v).reshape(d["extras_shapes"][k]) for k, v in d["extras"].items()}
    return net, d.get("meta", {}), extras


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def save_checkpoint(path, net: Network, meta: dict | None = None,
                    extras: dict[str, np.ndarray] | None = None) -> None:
    atomic_write_text(path, json.dumps(checkpoint_dict(net, meta, extras), sort_keys=True))


def load_checkpoint(path):
    """Return ``(network, meta, extras)``."""
    return from_checkpoint_dict(json.loads(Path(path).read_text()))
