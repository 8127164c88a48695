"""Benchmark runners: OOD detection, wrong-prediction detection, predictive
performance, the XOR uncertainty heatmap and ablation sweeps.

Every runner trains only on the in-distribution train split, evaluates each
(method, seed) pair independently, and writes a CSV whose rows are ordered by
method then seed, followed by one ``mean`` row per method.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ExperimentConfig
from .datasets import (
    BlobOodConfig,
    Dataset,
    XorToyConfig,
    gen_blobs_ood,
    gen_xor,
    holdout_class_ood,
    load_idx,
    negate_images,
    read_idx,
    IDX_IMAGES_MAGIC,
    XOR_CENTERS,
    split,
)
from .errors import DataError
from .metrics import accuracy, average_precision, nll, rank_bin_normalise, roc_auc
from .network import Network, TrainResult, fit, predict, train_ensemble
from .numeric import RngStream
from .uncertainty import ScoredBatch, UncertaintyMethod, classification_probs, score_method

log = logging.getLogger(__name__)

MCD_STREAM = 1000


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset
    ood: Dataset | None


def _cap(d: Dataset, limit) -> Dataset:
    return d if limit is None or len(d) <= limit else d.subset(np.arange(int(limit)))


def prepare_data(cfg: ExperimentConfig) -> Splits:
    """Build train/val/test splits and the OOD set described by ``cfg.data``."""
    d = cfg.data
    kind = d["kind"]
    fractions = cfg.split_fractions()
    ood = None
    if kind == "xor":
        data = gen_xor(XorToyConfig(int(d["n_samples"]), float(d["noise_sd"]), int(d["seed"])))
        train, val, test = split(data, fractions, int(d["seed"]))
    elif kind == "blobs":
        data, ood = gen_blobs_ood(BlobOodConfig(d["in_centers"], float(d["ood_shift"]),
                                                int(d["per_class"]), float(d["sd"]), int(d["seed"]),
                                                int(d["ood_directions"])))
        train, val, test = split(data, fractions, int(d["seed"]))
    else:
        train, val, test, ood = _prepare_idx(cfg)
    if d["ood"] == "same":
        ood = Dataset(test.features.copy(), test.labels.copy(), test.n_classes)
    limit = d["limit"]
    return Splits(_cap(train, limit), _cap(val, limit), _cap(test, limit),
                  None if ood is None else _cap(ood, limit))


def _prepare_idx(cfg):
    d = cfg.data
    paths = d["paths"] or {}
    try:
        train_x, train_y = paths["train_images"], paths["train_labels"]
    except KeyError as exc:
        raise ConfigError(f"data.paths needs {exc.args[0]!r} for idx data") from exc
    full = load_idx(train_x, train_y)
    test_full = None
    if "test_images" in paths:
        test_full = load_idx(paths["test_images"], paths["test_labels"], full.n_classes)
    ood = None
    held = d["held_classes"]
    if held:
        full, ood = holdout_class_ood(full, held)
        if test_full is not None:
            test_full, ood_test = holdout_class_ood(test_full, held)
            ood = ood_test
    if "ood_images" in paths:
        imgs = read_idx(paths["ood_images"], IDX_IMAGES_MAGIC)
        feats = imgs.reshape(imgs.shape[0], -1).astype(np.float64) / 255.0
        if feats.shape[1] != full.features.shape[1]:
            raise DataError(f"OOD images have {feats.shape[1]} pixels, in-distribution "
                            f"{full.features.shape[1]}")
        ood = Dataset(feats, np.zeros(len(feats), dtype=np.int64), full.n_classes)
    if ood is not None and d["negate_ood"]:
        ood = negate_images(ood)
    fractions = cfg.split_fractions()
    seed = int(d["seed"])
    if test_full is None:
        train, val, test = split(full, fractions, seed)
    else:
        f_train = fractions[0] / (fractions[0] + fractions[1]) if fractions[1] else 1.0
        if f_train < 1.0:
            train, val, _ = split(full, (f_train, 1.0 - f_train, 0.0), seed)
        else:
            train, val = full, full.subset(np.arange(0))
        test = test_full
    return train, val, test, ood


class ModelCache:
    """Trains each (network spec, seed[, members]) combination at most once per run."""

    def __init__(self, cfg: ExperimentConfig, train: Dataset):
        self.cfg = cfg
        self.train = train
        self._store = {}

    def _key(self, spec, seed, members):
        return (repr(spec.to_dict()), seed, members)

    def get(self, spec, seed: int, members: int = 0):
        key = self._key(spec, seed, members)
        if key not in self._store:
            tcfg = self.cfg.train_config(seed)
            log.info("training %s seed=%d members=%d", spec.head, seed, members)
            if members:
                self._store[key] = [r.network for r in train_ensemble(spec, self.train, tcfg, members)]
            else:
                self._store[key] = fit(spec, self.train, tcfg).network
        return self._store[key]

    def for_method(self, method: str, seed: int, **loss_kw):
        spec = self.cfg.network_spec(method, self.train.features.shape[1], self.train.n_classes,
                                     **loss_kw)
        members = int(self.cfg.raw["de_members"]) if method == "DE" else 0
        return self.get(spec, seed, members)


def method_of(cfg: ExperimentConfig, name: str) -> UncertaintyMethod:
    return UncertaintyMethod(name, passes=int(cfg.raw["mcd_passes"]), members=int(cfg.raw["de_members"]))


def score(cfg, name: str, nets, x, seed: int) -> ScoredBatch:
    return score_method(method_of(cfg, name), nets, x, RngStream(seed, MCD_STREAM))


# CSV -------------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def with_means(rows: list, key_cols: int, value_cols: list) -> list:
    """Append a ``mean`` row per group (first ``key_cols - 1`` columns) after its seeds.

    ``None`` values (skipped runs) are excluded from the mean.
    """
    out, groups = [], {}
    for row in rows:
        groups.setdefault(tuple(row[: key_cols - 1]), []).append(row)
    for key, grp in groups.items():
        out.extend(grp)
        means = []
        for c in value_cols:
            vals = [r[c] for r in grp if r[c] is not None]
            means.append(math.fsum(vals) / len(vals) if vals else None)
        out.append(list(key) + ["mean"] + means + [""] * (len(grp[0]) - key_cols - len(value_cols)))
    return out


def _none_blank(rows):
    return [["" if v is None else v for v in r] for r in rows]


def _out(cfg, out_dir, name):
    return os.path.join(out_dir if out_dir is not None else cfg.out_dir, name)


# OOD detection ---------------------------------------------------------------

@dataclass
class OodResultRow:
    method: str
    seed: int
    roc_auc: float
    average_precision: float


def run_ood_experiment(cfg: ExperimentConfig, out_dir=None, splits: Splits | None = None) -> list:
    """In-distribution test set (label 0) against the OOD set (label 1)."""
    splits = splits or prepare_data(cfg)
    if splits.ood is None:
        raise ConfigError("OOD experiment needs an out-of-distribution set (blobs, idx with "
                          "ood_images/held_classes, or data.ood: same)")
    cache = ModelCache(cfg, splits.train)
    x = np.vstack([splits.test.features, splits.ood.features])
    is_ood = np.r_[np.zeros(len(splits.test)), np.ones(len(splits.ood))]
    rows = []
    for name in cfg.methods:
        for seed in cfg.seeds:
            sb = score(cfg, name, cache.for_method(name, seed), x, seed)
            rows.append(OodResultRow(name, seed, roc_auc(sb.scores, is_ood),
                                     average_precision(sb.scores, is_ood)))
    table = with_means([[r.method, r.seed, r.roc_auc, r.average_precision] for r in rows], 2, [2, 3])
    write_csv(_out(cfg, out_dir, "ood.csv"), ["method", "seed", "roc_auc", "average_precision"], table)
    return rows


# wrong-prediction detection --------------------------------------------------

def wrong_prediction_auc(scores, probs, labels):
    """ROC AUC for flagging misclassified samples; ``(None, reason)`` when undefined."""
    wrong = (np.asarray(probs).argmax(axis=1) != np.asarray(labels)).astype(np.int64)
    if wrong.sum() == 0:
        return None, "skipped: all predictions correct"
    if wrong.sum() == wrong.size:
        return None, "skipped: all predictions wrong"
    return roc_auc(scores, wrong), "ok"


def run_wrong_prediction_experiment(cfg: ExperimentConfig, out_dir=None, splits=None) -> list:
    splits = splits or prepare_data(cfg)
    cache = ModelCache(cfg, splits.train)
    rows = []
    for name in cfg.methods:
        for seed in cfg.seeds:
            sb = score(cfg, name, cache.for_method(name, seed), splits.test.features, seed)
            auc, status = wrong_prediction_auc(sb.scores, sb.probs, splits.test.labels)
            rows.append([name, seed, auc, status])
    table = with_means(rows, 2, [2])
    write_csv(_out(cfg, out_dir, "wrongpred.csv"), ["method", "seed", "roc_auc", "status"],
              _none_blank(table))
    return rows


# predictive performance ------------------------------------------------------

def run_predictive_performance(cfg: ExperimentConfig, out_dir=None, splits=None) -> list:
    splits = splits or prepare_data(cfg)
    cache = ModelCache(cfg, splits.train)
    rows = []
    for name in cfg.methods:
        for seed in cfg.seeds:
            sb = score(cfg, name, cache.for_method(name, seed), splits.test.features, seed)
            rows.append([name, seed, accuracy(sb.probs, splits.test.labels),
                         nll(sb.probs, splits.test.labels)])
    write_csv(_out(cfg, out_dir, "perf.csv"), ["method", "seed", "accuracy", "nll"],
              with_means(rows, 2, [2, 3]))
    return rows


# XOR heatmap -----------------------------------------------------------------

@dataclass
class GridHeatmap:
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # values[iy, ix]
    normalisation: str = "raw"

    def points(self) -> np.ndarray:
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.c_[gx.ravel(), gy.ravel()]

    def normalised(self, bins: int = 400) -> "GridHeatmap":
        v = rank_bin_normalise(self.values.ravel(), bins).reshape(self.values.shape)
        return GridHeatmap(self.xs, self.ys, v, f"rank_bin({bins})")


def heatmap_from_network(net: Network, lo=-2.5, hi=2.5, resolution=100) -> GridHeatmap:
    """Inhibited-softmax uncertainty on a uniform ``resolution`` x ``resolution`` grid."""
    if resolution < 2:
        raise ValueError("grid resolution must be >= 2 per axis")
    if net.spec.head != "is":
        raise ValueError("heatmap needs an inhibited softmax network")
    axis = np.linspace(lo, hi, resolution)
    hm = GridHeatmap(axis, axis.copy(), np.zeros((resolution, resolution)))
    u = predict(net, hm.points()).uncertainty_channel
    hm.values = u.reshape(resolution, resolution)
    return hm


def write_heatmap_csv(hm: GridHeatmap, path) -> None:
    pts = hm.points()
    write_csv(path, ["x", "y", "uncertainty"],
              [[float(p[0]), float(p[1]), float(v)] for p, v in zip(pts, hm.values.ravel())])


def write_pgm(hm: GridHeatmap, path, bins: int = 400) -> None:
    """8-bit binary PGM of the rank-binned map; white = most uncertain, top row = max y."""
    norm = hm.normalised(bins).values
    img = np.round(norm[::-1] * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def band_and_center_means(hm: GridHeatmap, band=0.15, radius=0.3):
    """Mean uncertainty in the |x| < band strip and within ``radius`` of the XOR centers.

    A region holding no grid point (very coarse grids) gives NaN.
    """
    pts = hm.points()
    v = hm.values.ravel()
    in_band = np.abs(pts[:, 0]) < band
    dist = np.min(np.linalg.norm(pts[:, None, :] - XOR_CENTERS[None], axis=2), axis=1)
    near = dist < radius
    return (float(v[in_band].mean()) if in_band.any() else math.nan,
            float(v[near].mean()) if near.any() else math.nan)


def train_xor(cfg: ExperimentConfig, seed: int, noise_sd: float | None = None) -> tuple:
    if noise_sd is not None:
        cfg = cfg.override(**{"data.noise_sd": float(noise_sd)})
    d = cfg.data
    data = gen_xor(XorToyConfig(int(d["n_samples"]), float(d["noise_sd"]), int(d["seed"])))
    spec = cfg.network_spec("IS", 2, 2)
    result = fit(spec, data, cfg.train_config(seed))
    return result, data


def run_xor_heatmap(cfg: ExperimentConfig, out_dir=None, seed: int | None = None,
                    trained: TrainResult | None = None) -> GridHeatmap:
    """Train (unless given) an IS network on XOR and map its uncertainty over the grid."""
    if cfg.data["kind"] != "xor":
        cfg = cfg.override(**{"data.kind": "xor"})
    seed = cfg.seeds[0] if seed is None else seed
    if trained is None:
        trained, _ = train_xor(cfg, seed)
    if not trained.loss_history:
        raise ValueError("heatmap requires a trained network")
    lo, hi = cfg.raw["heatmap"]["range"]
    hm = heatmap_from_network(trained.network, float(lo), float(hi), int(cfg.raw["heatmap"]["resolution"]))
    write_heatmap_csv(hm, _out(cfg, out_dir, "heatmap.csv"))
    write_pgm(hm, _out(cfg, out_dir, "heatmap.pgm"))
    return hm


def xor_noise_sweep(cfg: ExperimentConfig, noise_levels=(0.0, 0.1, 0.3, 0.5), out_dir=None) -> list:
    """Rows ``[noise_sd, seed, train_accuracy, band_mean, center_mean]`` per noise x seed."""
    if cfg.data["kind"] != "xor":
        cfg = cfg.override(**{"data.kind": "xor"})
    lo, hi = cfg.raw["heatmap"]["range"]
    res = int(cfg.raw["heatmap"]["resolution"])
    rows = []
    for noise in noise_levels:
        for seed in cfg.seeds:
            result, data = train_xor(cfg, seed, noise)
            probs = classification_probs(predict(result.network, data.features))
            hm = heatmap_from_network(result.network, float(lo), float(hi), res)
            band, center = band_and_center_means(hm)
            rows.append([float(noise), seed, accuracy(probs, data.labels), band, center])
    if out_dir is not None:
        write_csv(os.path.join(out_dir, "xor_sweep.csv"),
                  ["noise_sd", "seed", "train_accuracy", "band_uncertainty", "center_uncertainty"],
                  with_means(rows, 2, [2, 3, 4]))
    return rows


# ablations -------------------------------------------------------------------

ABLATION_SWEEPS = (
    ("lambda", (0.0, 1e-6, 1e-4, 1e-2)),
    ("penultimate", ("cauchy", "gaussian", "triangle", "relu")),
    ("weight_decay", (0.0, 1e-4, 1e-2)),
)


def ablation_variants(cfg: ExperimentConfig) -> list:
    """``(variant_name, ExperimentConfig)`` pairs, one sweep axis changed at a time."""
    out = []
    for axis, values in ABLATION_SWEEPS:
        for v in values:
            key = {"lambda": "loss.lambda", "penultimate": "network.penultimate",
                   "weight_decay": "loss.weight_decay"}[axis]
            out.append((f"{axis}={v}", cfg.override(**{key: v})))
    return out


def run_ablation(cfg: ExperimentConfig, out_dir=None, splits=None) -> list:
    """Rows ``[variant, seed, metric, value]`` for OOD AUC, wrong-prediction AUC and accuracy."""
    splits = splits or prepare_data(cfg)
    caches = {}
    rows = []
    for variant, vcfg in ablation_variants(cfg):
        spec = vcfg.network_spec("IS", splits.train.features.shape[1], splits.train.n_classes)
        key = repr(spec.to_dict())
        cache = caches.setdefault(key, ModelCache(vcfg, splits.train))
        for seed in cfg.seeds:
            net = cache.get(spec, seed)
            if splits.ood is not None:
                x = np.vstack([splits.test.features, splits.ood.features])
                is_ood = np.r_[np.zeros(len(splits.test)), np.ones(len(splits.ood))]
                sb = score(vcfg, "IS", net, x, seed)
                rows.append([variant, seed, "ood_roc_auc", roc_auc(sb.scores, is_ood)])
            sb = score(vcfg, "IS", net, splits.test.features, seed)
            auc, _ = wrong_prediction_auc(sb.scores, sb.probs, splits.test.labels)
            rows.append([variant, seed, "wrongpred_roc_auc", auc])
            rows.append([variant, seed, "accuracy", accuracy(sb.probs, splits.test.labels)])
    table = []
    for (variant, metric), grp in _groupby(rows, lambda r: (r[0], r[2])):
        table.extend(grp)
        vals = [r[3] for r in grp if r[3] is not None]
        table.append([variant, "mean", metric, math.fsum(vals) / len(vals) if vals else None])
    write_csv(_out(cfg, out_dir, "ablation.csv"), ["variant", "seed", "metric", "value"],
              _none_blank(table))
    return rows


def _groupby(rows, key):
    groups = {}
    for r in rows:
        groups.setdefault(key(r), []).append(r)
    return groups.items()


def ablation_means(rows) -> dict:
    """``{(variant, metric): mean over seeds}`` from ``run_ablation`` rows."""
    out = {}
    for (variant, metric), grp in _groupby(rows, lambda r: (r[0], r[2])):
        vals = [r[3] for r in grp if r[3] is not None]
        out[(variant, metric)] = math.fsum(vals) / len(vals) if vals else float("nan")
    return out


def method_means(rows, attr: str = "roc_auc") -> dict:
    out = {}
    for r in rows:
        out.setdefault(r.method, []).append(getattr(r, attr))
    return {k: math.fsum(v) / len(v) for k, v in out.items()}
