"""Command-line entry point.

``--experiment train`` (default) trains a network and writes
``metrics.csv``, ``model.npz``, ``config.json`` and, for multi-worker SENG,
``traffic.csv`` into ``--out``. ``--experiment ntk`` writes the residual
sequence of the wide two-layer network; ``--experiment sweep`` writes the
sketch-error table.

Settings can also come from an INI file (``--config``) whose ``[train]``
section uses the flag names; command-line flags win.
"""

import argparse
import configparser
import csv
import json
import sys
from pathlib import Path

import numpy as np

from ..optimizer import TrainConfig, TrainingDiverged
from ..sketch import SketchSpec
from . import data as datasets
from .ntk import ResidualBlowup, run_ntk_experiment, setup_ntk
from .sweep import oracle_error_sweep, write_rows, write_summary
from .training import CsvSink, build_network, fit, save_model, write_config, write_traffic

OPTIMIZER_LR = {"seng": 0.5, "sgd": 0.1}


class CliError(Exception):
    def __init__(self, kind, message):
        self.kind = kind
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _optional_int(text):
    return None if text.lower() in ("none", "") else int(text)


def build_parser():
    p = _Parser(prog="seng-train", description="SENG / SGD training and experiments")
    p.add_argument("--config", type=Path, help="INI file with a [train] section")
    p.add_argument("--experiment", choices=["train", "ntk", "sweep"], default="train")
    p.add_argument("--optimizer", choices=["seng", "sgd"], default="seng")
    p.add_argument("--dataset", choices=["synthetic", "ntk", "idx"], default="synthetic")
    p.add_argument("--idx-images", type=Path)
    p.add_argument("--idx-labels", type=Path)
    p.add_argument("--layers", help="comma-separated layer specs, e.g. conv:8:3:1:1,relu")
    p.add_argument("--hidden", default="32", help="hidden widths of the default MLP")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--epochs", type=float, default=10.0)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-schedule", choices=["constant", "cosine", "exp"], default="constant")
    p.add_argument("--decay-rate", type=float, default=6.0)
    p.add_argument("--warmup-epochs", type=float, default=0.0)
    p.add_argument("--warmup-lr", type=float, default=0.01)
    p.add_argument("--damping", type=float, default=0.1)
    p.add_argument("--damping-factor", type=float, default=1.0)
    p.add_argument("--damping-period", type=float, default=10.0)
    p.add_argument("--update-freq", type=int, default=1)
    p.add_argument("--threshold", type=int, default=200_000)
    p.add_argument("--routing", choices=["threshold", "storage"], default="threshold")
    p.add_argument("--sketch", choices=["uniform", "leverage"], default="uniform")
    p.add_argument("--sketch-size", type=_optional_int)
    p.add_argument("--sketch-a", type=_optional_int)
    p.add_argument("--sketch-g", type=_optional_int)
    p.add_argument("--sketch-scaling", choices=["embedding", "inverse_prob"], default="embedding")
    p.add_argument("--rank", type=_optional_int)
    p.add_argument("--uc-mode", choices=["averaged", "exact"], default="averaged")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--stale-coeffs", action="store_true")
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--diagnostics", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("runs/latest"))
    # ntk experiment
    p.add_argument("--ntk-curvature", choices=["jacobian", "efim"], default="jacobian")
    p.add_argument("--width", type=int, default=2048)
    p.add_argument("--ntk-samples", type=int, default=20)
    p.add_argument("--ntk-dim", type=int, default=8)
    p.add_argument("--steps", type=int, default=100)
    # sweep experiment
    p.add_argument("--sweep-shape", default="16,32,4", help="n_G,n_A,kappa")
    p.add_argument("--sweep-seeds", type=int, default=50)
    p.add_argument("--sweep-grid", default="64,128,256,512")
    p.add_argument("--sweep-batch", type=int, default=16, help="samples per sweep layer")
    p.add_argument("--sweep-damping", type=float, default=1.0)
    return p


def _apply_config_file(parser, path):
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise CliError("config", f"cannot read config file {path}")
    if "train" not in cp:
        raise CliError("config", "config file needs a [train] section")
    actions = {a.dest: a for a in parser._actions}
    defaults = {}
    for key, raw in cp["train"].items():
        dest = key.replace("-", "_")
        if dest not in actions or dest == "config":
            raise CliError("config", f"unknown config key {key!r}")
        action = actions[dest]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = cp["train"].getboolean(key)
            continue
        value = action.type(raw) if action.type else raw
        if action.choices and value not in action.choices:
            raise CliError("config", f"{key}: {value!r} not in {list(action.choices)}")
        defaults[dest] = value
    parser.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        _apply_config_file(parser, args.config)
        args = parser.parse_args(argv)
    return args


def config_from_args(args):
    lr = args.lr if args.lr is not None else OPTIMIZER_LR[args.optimizer]
    loss = "mse" if args.dataset == "ntk" else "cross_entropy"
    try:
        return TrainConfig(
            lr=lr, lr_schedule=args.lr_schedule, decay_rate=args.decay_rate,
            warmup_epochs=args.warmup_epochs, warmup_lr=args.warmup_lr, damping=args.damping,
            damping_factor=args.damping_factor, damping_period=args.damping_period,
            update_freq=args.update_freq, threshold=args.threshold, routing=args.routing,
            sketch=args.sketch, sketch_size=args.sketch_size, sketch_a=args.sketch_a,
            sketch_g=args.sketch_g, sketch_scaling=args.sketch_scaling, rank=args.rank,
            uc_mode=args.uc_mode, batch_size=args.batch_size, epochs=args.epochs,
            momentum=args.momentum, weight_decay=args.weight_decay, loss=loss,
            workers=args.workers, stale_coeffs=args.stale_coeffs, diagnostics=args.diagnostics,
            seed=args.seed)
    except ValueError as exc:
        raise CliError("config", str(exc)) from exc


def load_dataset(args):
    if args.dataset == "synthetic":
        return datasets.synthetic_classification(seed=args.seed)
    if args.dataset == "ntk":
        return datasets.ntk_regression(args.ntk_samples, args.ntk_dim, seed=args.seed)
    if args.idx_images is None or args.idx_labels is None:
        raise CliError("config", "--dataset idx needs --idx-images and --idx-labels")
    try:
        return datasets.idx_dataset(args.idx_images, args.idx_labels, seed=args.seed)
    except (OSError, datasets.IdxFormatError) as exc:
        raise CliError("data", str(exc)) from exc


def run_train(args):
    config = config_from_args(args)
    data = load_dataset(args)
    if config.batch_size > len(data.x_train):
        raise CliError("config", "batch size exceeds training set size")
    layers = [s for s in args.layers.split(",") if s] if args.layers else None
    hidden = [int(h) for h in args.hidden.split(",") if h]
    try:
        net = build_network(data, hidden, layers, seed=args.seed)
    except ValueError as exc:
        raise CliError("config", str(exc)) from exc
    args.out.mkdir(parents=True, exist_ok=True)
    with CsvSink(args.out / "metrics.csv") as sink:
        last, opt = fit(net, data, config, args.optimizer, sink, max_steps=args.max_steps)
    save_model(args.out / "model.npz", net)
    write_config(args.out / "config.json", config, {"optimizer": args.optimizer})
    if hasattr(opt, "sync"):
        write_traffic(args.out / "traffic.csv", opt.sync)
    return {"status": "ok", "final_loss": last.train_loss, "grad_norm": last.grad_norm,
            "test_acc": last.test_acc, "out": str(args.out)}


class NtkDiverged(RuntimeError):
    pass


def run_ntk(args):
    problem = setup_ntk(args.ntk_samples, args.ntk_dim, args.width, 1.0, seed=args.seed)
    sketch = None
    if args.sketch_size is not None:
        sketch = SketchSpec(args.sketch, args.sketch_size, replacement=False, seed=args.seed)
    lr = args.lr if args.lr is not None else 0.5
    args.out.mkdir(parents=True, exist_ok=True)
    try:
        residuals = run_ntk_experiment(problem, lr, args.damping, args.steps, sketch, args.seed,
                                       args.ntk_curvature)
    except ResidualBlowup as exc:
        residuals = exc.residuals
        _write_residuals(args.out / "ntk_residuals.csv", residuals)
        raise NtkDiverged(str(exc)) from exc
    _write_residuals(args.out / "ntk_residuals.csv", residuals)
    return {"status": "ok", "initial": residuals[0], "final": residuals[-1], "out": str(args.out)}


def _write_residuals(path, residuals):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "residual_sq"])
        for k, r in enumerate(residuals):
            w.writerow([k, repr(float(r))])


def run_sweep(args):
    shape = tuple(int(v) for v in args.sweep_shape.split(","))
    grid = tuple(int(v) for v in args.sweep_grid.split(","))
    try:
        rows, summary = oracle_error_sweep(shape, args.sweep_batch, args.sweep_damping, grid,
                                           range(args.sweep_seeds), args.sketch)
    except ValueError as exc:
        raise CliError("config", str(exc)) from exc
    args.out.mkdir(parents=True, exist_ok=True)
    write_rows(args.out / "sweep_rows.csv", rows)
    write_summary(args.out / "sweep_summary.csv", summary)
    return {"status": "ok", "violations": sum(s["bound_violations"] for s in summary),
            "out": str(args.out)}


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
        runner = {"train": run_train, "ntk": run_ntk, "sweep": run_sweep}[args.experiment]
        result = runner(args)
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return 2
    except (TrainingDiverged, NtkDiverged) as exc:
        print(json.dumps({"error": "diverged", "message": str(exc)}), file=sys.stderr)
        return 3
    print(json.dumps(result, default=lambda v: None if v is None else float(v)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
