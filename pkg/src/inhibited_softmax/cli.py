"""Command-line entry point.

Exit codes: 0 success, 1 usage/config error, 2 data or checkpoint error,
3 numerical failure (training diverged).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import experiments as ex
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig
from .errors import CheckpointError, DataError, NumericalError
from .network import fit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.from_dict()
    over = {}
    if args.seed is not None:
        over["seeds"] = [args.seed]
    if args.out is not None:
        over["out_dir"] = args.out
    return cfg.override(**over) if over else cfg


def cmd_train(args, cfg):
    splits = ex.prepare_data(cfg)
    seed = cfg.seeds[0]
    spec = cfg.configured_spec(splits.train.features.shape[1], splits.train.n_classes)
    result = fit(spec, splits.train, cfg.train_config(seed))
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = args.checkpoint or os.path.join(cfg.out_dir, "model.json")
    save_checkpoint(result.network, path)
    ex.write_csv(os.path.join(cfg.out_dir, "history.csv"), ["epoch", "loss"],
                 [[i, float(v)] for i, v in enumerate(result.loss_history)])
    print(f"saved {path} (final loss {result.loss_history[-1]:.6g})")


def cmd_eval_ood(args, cfg):
    rows = ex.run_ood_experiment(cfg)
    for m, v in ex.method_means(rows).items():
        print(f"{m:6s} roc_auc={v:.4f}")


def cmd_wrong_pred(args, cfg):
    ex.run_wrong_prediction_experiment(cfg)
    print(f"wrote {os.path.join(cfg.out_dir, 'wrongpred.csv')}")


def cmd_perf(args, cfg):
    ex.run_predictive_performance(cfg)
    print(f"wrote {os.path.join(cfg.out_dir, 'perf.csv')}")


def cmd_heatmap(args, cfg):
    trained = None
    if args.checkpoint:
        net = load_checkpoint(args.checkpoint)
        trained = ex.TrainResult(net, [float("nan")])
    hm = ex.run_xor_heatmap(cfg, trained=trained)
    band, center = ex.band_and_center_means(hm)
    print(f"band uncertainty {band:.4g}, cluster-center uncertainty {center:.4g}")
    if args.sweep:
        ex.xor_noise_sweep(cfg, out_dir=cfg.out_dir)


def cmd_ablate(args, cfg):
    ex.run_ablation(cfg)
    print(f"wrote {os.path.join(cfg.out_dir, 'ablation.csv')}")


def cmd_inspect(args, cfg):
    net = load_checkpoint(args.path)
    summary = {
        "spec": net.spec.to_dict(),
        "layers": [
            {"shape": list(l.weights.shape), "bias": l.has_bias,
             "weight_abs_max": float(np.abs(l.weights).max())}
            for l in net.dense
        ],
        "parameters": int(sum(p.size for p in net.parameters())),
    }
    if net.spec.head == "is":
        n = net.spec.n_classes
        summary["base_rate_certainty"] = n / (n + float(np.exp(net.spec.a)))
    print(json.dumps(summary, indent=2))


COMMANDS = {
    "train": cmd_train,
    "eval-ood": cmd_eval_ood,
    "wrong-pred": cmd_wrong_pred,
    "perf": cmd_perf,
    "heatmap": cmd_heatmap,
    "ablate": cmd_ablate,
    "inspect-checkpoint": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML/JSON experiment config")
    common.add_argument("--seed", type=int, help="run a single seed instead of the configured list")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    p = _Parser(prog="inhibited-softmax", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    t = sub.add_parser("train", parents=[common], help="train one network and save a checkpoint")
    t.add_argument("--checkpoint", help="checkpoint path (default <out>/model.json)")
    sub.add_parser("eval-ood", parents=[common], help="OOD detection benchmark -> ood.csv")
    sub.add_parser("wrong-pred", parents=[common], help="wrong-prediction detection -> wrongpred.csv")
    sub.add_parser("perf", parents=[common], help="accuracy and NLL -> perf.csv")
    h = sub.add_parser("heatmap", parents=[common], help="XOR uncertainty map -> heatmap.csv/.pgm")
    h.add_argument("--checkpoint", help="use a trained checkpoint instead of training")
    h.add_argument("--sweep", action="store_true", help="also write xor_sweep.csv over noise levels")
    sub.add_parser("ablate", parents=[common], help="ablation sweeps -> ablation.csv")
    i = sub.add_parser("inspect-checkpoint", parents=[common], help="summarise a checkpoint")
    i.add_argument("path")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
