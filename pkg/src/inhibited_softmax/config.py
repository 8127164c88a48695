"""Experiment configuration: YAML/JSON files with dotted or nested keys.

Recognised keys (all optional)::

    network.widths  network.activation  network.penultimate  network.head
    network.a  network.hidden_bias  network.dropout
    loss.lambda  loss.weight_decay
    train.epochs  train.batch_size  train.optimizer  train.lr
    data.kind  data.paths  data.noise_sd  data.n_samples  data.seed
    data.in_centers  data.ood_shift  data.ood_directions  data.per_class  data.sd
    data.split
    data.held_classes  data.negate_ood  data.ood  data.limit
    methods  seeds  out_dir  mcd_passes  de_members
    heatmap.resolution  heatmap.range
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import yaml

from .heads import LossConfig
from .network import NetworkSpec, TrainConfig
from .uncertainty import METHODS


class ConfigError(ValueError):
    """Invalid or unknown configuration key/value (CLI usage error)."""


DEFAULTS = {
    "network": {
        "widths": None,
        "activation": "relu",
        "penultimate": "cauchy",
        "head": "is",
        "a": 1.0,
        "hidden_bias": True,
        "dropout": 0.25,
    },
    "loss": {"lambda": 1e-6, "weight_decay": None},
    "train": {"epochs": 40, "batch_size": 64, "optimizer": "adadelta", "lr": None},
    "data": {
        "kind": "blobs",
        "paths": {},
        "noise_sd": 0.0,
        "n_samples": 500,
        "seed": 0,
        "in_centers": [[0.0, 0.0], [4.0, 0.0], [2.0, 3.5]],
        "ood_shift": 10.0,
        "per_class": 600,
        "sd": 1.0,
        "ood_directions": 8,
        "split": None,
        "held_classes": None,
        "negate_ood": False,
        "ood": None,
        "limit": None,
    },
    "methods": ["IS", "BASE", "BASEE", "MCD", "DE"],
    "seeds": [0, 1, 2],
    "out_dir": "results",
    "mcd_passes": 50,
    "de_members": 5,
    "heatmap": {"resolution": 100, "range": [-2.5, 2.5]},
}

# per-data-kind defaults applied where the user left a value unset
PRESETS = {
    "blobs": {"hidden": [32, 16], "weight_decay": 0.0, "split": [0.5, 0.1, 0.4]},
    "xor": {"hidden": [100, 100, 100, 100], "weight_decay": 1e-2, "split": [0.8, 0.0, 0.2]},
    "idx": {"hidden": [200, 100], "weight_decay": 0.0, "split": [0.8, 0.1, 0.1]},
}


def _expand(flat: dict) -> dict:
    """Turn ``{"a.b": 1}`` into ``{"a": {"b": 1}}``; nested input passes through."""
    out: dict = {}
    for key, value in flat.items():
        if isinstance(value, dict) and key != "paths":
            value = _expand(value)
        node = out
        parts = str(key).split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        if isinstance(value, dict) and isinstance(node.get(parts[-1]), dict):
            node[parts[-1]].update(value)
        else:
            node[parts[-1]] = value
    return out


def _merge(base: dict, override: dict, where="") -> dict:
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where + key!r}")
        if isinstance(base[key], dict) and key != "paths":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where + key!r} must be a mapping")
            _merge(base[key], value, where + key + ".")
        else:
            base[key] = value
    return base


@dataclass
class ExperimentConfig:
    raw: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    @classmethod
    def from_dict(cls, d: dict | None = None) -> "ExperimentConfig":
        raw = copy.deepcopy(DEFAULTS)
        if d:
            _merge(raw, _expand(d))
        cfg = cls(raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as f:
            doc = yaml.safe_load(f) or {}
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(doc)

    def override(self, **kw) -> "ExperimentConfig":
        return ExperimentConfig.from_dict(_deep_update(copy.deepcopy(self.raw), _expand(kw)))

    def validate(self):
        r = self.raw
        if r["data"]["kind"] not in PRESETS:
            raise ConfigError(f"data.kind must be one of {sorted(PRESETS)}")
        methods = r["methods"]
        if not methods or any(m not in METHODS for m in methods):
            raise ConfigError(f"methods must be a nonempty subset of {METHODS}")
        if not r["seeds"] or not all(isinstance(s, int) for s in r["seeds"]):
            raise ConfigError("seeds must be a nonempty list of integers")
        if r["network"]["head"] not in ("is", "softmax"):
            raise ConfigError("network.head must be 'is' or 'softmax'")
        if r["train"]["optimizer"] not in ("adadelta", "sgd"):
            raise ConfigError("train.optimizer must be 'adadelta' or 'sgd'")
        try:
            self.loss_config()
            self.train_config(0)
            w = r["network"]["widths"]
            if w is not None and len(w) < 2:
                raise ValueError("network.widths needs at least input and output widths")
            self.network_spec("IS", *((int(w[0]), int(w[-1])) if w else (2, 2)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    # accessors -----------------------------------------------------------
    @property
    def data(self) -> dict:
        return self.raw["data"]

    @property
    def methods(self) -> list:
        return list(self.raw["methods"])

    @property
    def seeds(self) -> list:
        return list(self.raw["seeds"])

    @property
    def out_dir(self) -> str:
        return self.raw["out_dir"]

    @property
    def preset(self) -> dict:
        return PRESETS[self.data["kind"]]

    def split_fractions(self):
        return tuple(self.data["split"] or self.preset["split"])

    def loss_config(self, **kw) -> LossConfig:
        loss = self.raw["loss"]
        wd = loss["weight_decay"]
        base = dict(evidence_lambda=float(loss["lambda"]),
                    weight_decay=float(self.preset["weight_decay"] if wd is None else wd))
        base.update(kw)
        return LossConfig(**base)

    def train_config(self, seed: int) -> TrainConfig:
        t = self.raw["train"]
        args = {} if t["lr"] is None else {"lr": float(t["lr"])}
        return TrainConfig(epochs=int(t["epochs"]), batch_size=int(t["batch_size"]), seed=int(seed),
                           optimizer=t["optimizer"], optimizer_args=args)

    def widths(self, n_in: int, n_classes: int) -> list:
        w = self.raw["network"]["widths"]
        if w is None:
            return [n_in, *self.preset["hidden"], n_classes]
        w = [int(v) for v in w]
        if w[0] != n_in or w[-1] != n_classes:
            raise ConfigError(f"network.widths {w} does not match data ({n_in} inputs, "
                              f"{n_classes} classes)")
        return w

    def network_spec(self, method: str, n_in: int, n_classes: int, **loss_kw) -> NetworkSpec:
        """Network used by ``method``: IS gets the inhibited head, others a plain softmax MLP."""
        n = self.raw["network"]
        widths = self.widths(n_in, n_classes)
        if method == "IS":
            return NetworkSpec(widths, hidden_activation=n["activation"],
                               penultimate_activation=n["penultimate"], head="is", a=float(n["a"]),
                               hidden_bias=bool(n["hidden_bias"]), loss=self.loss_config(**loss_kw))
        return NetworkSpec(widths, hidden_activation=n["activation"],
                           penultimate_activation=n["activation"], head="softmax",
                           hidden_bias=bool(n["hidden_bias"]),
                           dropout_rate=float(n["dropout"]) if method == "MCD" else 0.0,
                           loss=self.loss_config(evidence_lambda=0.0))

    def configured_spec(self, n_in: int, n_classes: int) -> NetworkSpec:
        """Spec for the ``train`` command, honouring ``network.head`` directly."""
        return self.network_spec("IS" if self.raw["network"]["head"] == "is" else "BASE",
                                 n_in, n_classes)


def _deep_update(base: dict, upd: dict) -> dict:
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict) and k != "paths":
            _deep_update(base[k], v)
        else:
            base[k] = v
    return base
