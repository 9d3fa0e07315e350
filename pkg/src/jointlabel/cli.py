"""Command-line entry point: ``jointlabel <subcommand> [options]``.

Exit codes: 0 success, 1 check failed, 2 configuration/usage error,
3 file I/O error, 4 numerical divergence.
"""

import argparse
import logging
import sys

from . import experiment
from .config import ExperimentConfig, preset
from .errors import ConfigError, JointLabelError
from .trainer import OptimizerConfig


def _config(args) -> ExperimentConfig:
    cfg = preset(args.preset) if args.preset else ExperimentConfig()
    if args.config:
        cfg = ExperimentConfig.load(args.config, base=cfg)
    overrides = {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["out"] = args.out
    return cfg.updated(overrides)


def _common(p):
    p.add_argument("--config", metavar="PATH", help="config file with section.key = value lines")
    p.add_argument("--preset", metavar="NAME", help="named starting configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")


def build_parser():
    parser = argparse.ArgumentParser(prog="jointlabel", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inject", help="write a corrupted dataset file and noise report")
    _common(p)
    p.add_argument("--dataset-out", metavar="PATH")

    p = sub.add_parser("run", help="joint label optimisation followed by retraining")
    _common(p)
    p.add_argument("--no-resume", action="store_true", help="ignore an existing checkpoint")

    p = sub.add_parser("sweep", help="one run per value of a hyperparameter")
    _common(p)
    p.add_argument("--axis", required=True, choices=sorted(experiment.SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("plotdata", help="export per-epoch curves of a run directory")
    p.add_argument("run_dir")

    p = sub.add_parser("probe", help="memorisation grid: learning rate x noise rate")
    _common(p)
    p.add_argument("--rates", default="0.1,0.5,0.9")
    p.add_argument("--high-lr", type=float, default=0.2)
    p.add_argument("--high-epochs", type=int, default=100)
    p.add_argument("--low-lr", type=float, default=0.01)
    p.add_argument("--low-epochs", type=int, default=300)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and loss")
    p.add_argument("--configs", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _dispatch(args)
    except JointLabelError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


def _dispatch(args):
    if args.command == "gradcheck":
        ok, worst = experiment.cmd_gradcheck(args.configs, args.tol, args.seed)
        print(f"{'PASS' if ok else 'FAIL'} worst max_rel_err={worst:.2e} tol={args.tol:g}")
        return 0 if ok else 1
    if args.command == "plotdata":
        for path in experiment.cmd_plotdata(args.run_dir):
            print(path)
        return 0

    cfg = _config(args)
    if args.command == "inject":
        for k, v in experiment.cmd_inject(cfg, args.dataset_out):
            print(f"{k} = {'' if v is None else v}")
    elif args.command == "run":
        summary = experiment.cmd_run(cfg, resume=not args.no_resume)
        for k, v in summary.items():
            print(f"{k} = {'' if v is None else v}")
    elif args.command == "sweep":
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        rows = experiment.cmd_sweep(experiment.SweepSpec(args.axis, tuple(values), cfg), args.jobs)
        print(f"{args.axis:>14} {'val_acc':>8} best")
        for r in rows:
            val = "failed" if r["val_accuracy"] is None else f"{r['val_accuracy']:.2f}"
            print(f"{r['value']:>14} {val:>8} {'*' if r['best'] else ''}")
    elif args.command == "probe":
        rates = tuple(float(r) for r in args.rates.split(","))
        s = cfg.step1
        settings = {
            "high_lr": (OptimizerConfig(((0, args.high_lr),), s.momentum, s.weight_decay, s.batch_size), args.high_epochs),
            "low_lr": (OptimizerConfig(((0, args.low_lr),), s.momentum, 0.0, 32), args.low_epochs),
        }
        for name, c in experiment.cmd_probe(cfg, settings, rates):
            print(f"{name:8} r={c.rate:.2f} final_loss={float(c.final_train_loss):.4f} "
                  f"test_last={c.final_test_acc:.2f} test_best={c.best_test_acc:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
