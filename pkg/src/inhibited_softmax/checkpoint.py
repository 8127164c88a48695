"""Versioned JSON checkpoints.

Layout::

    {"version": 1,
     "spec": {...NetworkSpec fields...},
     "layers": [{"weights": [[...], ...], "bias": [...] | null}, ...],
     "head": {"kind": "is", "a": 1.0}}

Floats are written with Python's shortest round-trip repr, so loading
restores every parameter bit for bit.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import SchemaError, ShapeError, VersionMismatchError
from .layers import DenseLayer
from .network import Network, NetworkSpec

VERSION = 1


def to_document(net: Network) -> dict:
    layers = [
        {"weights": l.weights.tolist(), "bias": None if l.bias is None else l.bias.tolist()}
        for l in net.dense
    ]
    head = {"kind": net.spec.head}
    if net.spec.head == "is":
        head["a"] = float(net.spec.a)
    return {"version": VERSION, "spec": net.spec.to_dict(), "layers": layers, "head": head}


def save_checkpoint(net: Network, path) -> None:
    with open(path, "w") as f:
        json.dump(to_document(net), f, allow_nan=False)
        f.write("\n")


def from_document(doc) -> Network:
    if not isinstance(doc, dict) or "version" not in doc:
        raise SchemaError("checkpoint is not an object with a version field")
    if doc["version"] != VERSION:
        raise VersionMismatchError(f"checkpoint version {doc['version']!r}, expected {VERSION}")
    try:
        spec = NetworkSpec.from_dict(doc["spec"])
        layers = []
        for entry in doc["layers"]:
            w = np.array(entry["weights"], dtype=np.float64)
            b = entry["bias"]
            layers.append(DenseLayer(w, None if b is None else np.array(b, dtype=np.float64)))
        head = doc["head"]
        if head["kind"] != spec.head or (spec.head == "is" and float(head["a"]) != spec.a):
            raise SchemaError("head section disagrees with spec")
        return Network(spec, layers)
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError, ShapeError) as exc:
        raise SchemaError(f"malformed checkpoint: {exc}") from exc


def load_checkpoint(path) -> Network:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return from_document(doc)
