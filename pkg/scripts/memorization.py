"""Memorisation grid: cross-entropy on noisy labels at a high and a low learning rate.

Prints final train loss and last/best test accuracy per (setting, rate),
then optionally writes the full per-epoch curves.

    python scripts/memorization.py --curves probe_curves.csv
"""

import argparse

from jointlabel.autodiff import mlp_spec
from jointlabel.noise import make_blobs
from jointlabel.trainer import OptimizerConfig, memorization_probe

SETTINGS = {
    "high_lr": (OptimizerConfig(((0, 0.2),), momentum=0.9, weight_decay=1e-3, batch_size=128), 100),
    "low_lr": (OptimizerConfig(((0, 0.01),), momentum=0.9, weight_decay=0.0, batch_size=32), 300),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rates", default="0.1,0.5,0.9")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--curves", metavar="CSV")
    args = ap.parse_args()

    rates = [float(r) for r in args.rates.split(",")]
    ds = make_blobs(300, 3, 10, 6.0, seed=args.seed, n_test_per_class=100)
    spec = mlp_spec([10, 64, 64, 3])
    lines = ["setting,rate,epoch,train_loss,test_acc"]
    for name, (opt, epochs) in SETTINGS.items():
        for cell in memorization_probe(ds, spec, [opt], rates, epochs, seed=args.seed):
            print(f"{name:8} r={cell.rate:.1f} loss={cell.final_train_loss:.4f} "
                  f"test_last={cell.final_test_acc:.2f} test_best={cell.best_test_acc:.2f}")
            for e, (loss, acc) in enumerate(zip(cell.train_loss_curve, cell.test_acc_curve)):
                lines.append(f"{name},{cell.rate},{e},{loss!r},{acc}")
    if args.curves:
        with open(args.curves, "w") as f:
            f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
