"""Recovery and step-2 accuracy across symmetric noise rates on 2-D blobs.

Prints one row per rate: effective noise, recovery accuracy, step-2 test
accuracy (best-by-val and last), and a cross-entropy baseline trained on
the noisy labels.

    python scripts/desk_recovery.py --rates 0.0,0.2,0.4,0.6,0.8 --seeds 0,1
"""

import argparse

import numpy as np

from jointlabel.autodiff import mlp_spec
from jointlabel.noise import inject_symmetric, make_blobs
from jointlabel.trainer import JointRunConfig, OptimizerConfig, best_and_last, run_final, run_joint


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rates", default="0.0,0.2,0.4,0.6,0.8")
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--epochs", type=int, default=200)
    args = ap.parse_args()

    spec = mlp_spec([2, 32, 32, 3])
    step1 = OptimizerConfig(((0, 0.1),))
    step2 = OptimizerConfig.step_decay(0.1, (50, 75))
    print(f"{'rate':>5} {'eff':>6} {'recov':>7} {'best':>7} {'last':>7} {'ce_last':>8}")
    for rate in (float(r) for r in args.rates.split(",")):
        rows = []
        for seed in (int(s) for s in args.seeds.split(",")):
            noisy, corrupted = inject_symmetric(make_blobs(300, 3, 2, 4.0, seed, 100), rate, seed + 1)
            cfg = JointRunConfig(t1=int(0.15 * args.epochs), num_epochs=args.epochs, seed=seed)
            store, _, _ = run_joint(noisy, spec, cfg, step1)
            _, m2 = run_final(noisy, store.current, spec, step2, 100, seed=seed)
            _, ce = run_final(noisy, noisy.noisy[noisy.split == 0], spec, step2, 100, seed=seed, loss="ce")
            best, last = best_and_last(m2)
            rows.append([corrupted / noisy.counts[0] * 100, store.recovery_accuracy(), best.test_acc,
                         last.test_acc, ce[-1].test_acc])
        eff, rec, b, l, c = np.mean(rows, axis=0)
        print(f"{rate:5.2f} {eff:6.2f} {rec:7.2f} {b:7.2f} {l:7.2f} {c:8.2f}")


if __name__ == "__main__":
    main()
