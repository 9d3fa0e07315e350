"""Experiment orchestration behind the CLI subcommands.

A run directory holds::

    config.txt            resolved configuration
    dataset.jlds          the (noisy) dataset actually trained on
    step1_metrics.csv     one row per step-1 epoch, appended as training runs
    step2_metrics.csv     one row per step-2 epoch
    labels.jlmx           recovered label matrix (train split order)
    summary.txt           key = value results
    status.txt            running / complete / failed, last finished epoch
    checkpoint/           latest step-1 state, used by resume
"""

from __future__ import annotations

import logging
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import fileio, losses
from .autodiff import Conv2d, Dense, GlobalAvgPool, NetworkSpec, ParamSet, ReLU, Softmax, gradient_check, init_params, mlp_spec
from .config import ExperimentConfig
from .errors import ConfigError, JointLabelError, NumericalError, StorageError, UsageError
from .labels import LabelStore, ProbBuffer, bin_recovery_report, onehot
from .noise import confusion_counts, inject, make_blobs
from . import rng as rngmod
from .trainer import JointState, best_and_last, initial_joint_state, memorization_probe, run_final, run_joint

log = logging.getLogger(__name__)

SUMMARY_KEYS = (
    "status", "seed", "noise_kind", "nominal_noise_rate", "effective_noise_rate", "n_train",
    "recovery_accuracy", "step1_test_last", "best_epoch", "val_best", "test_best", "test_last",
)


# ------------------------------------------------------------ datasets


def load_dataset(cfg: ExperimentConfig):
    """Clean or file-provided dataset, before noise injection."""
    d = cfg.data
    if d.source == "blobs":
        return make_blobs(d.n_per_class, d.classes, d.dim, d.separation, cfg.seed, d.n_test_per_class)
    path = Path(d.source)
    if not path.exists():
        raise StorageError(f"dataset file not found: {path}")
    if not fileio.dataset_has_labels(path):
        raise ConfigError(f"{path} has no labels; pseudo-label it first")
    return fileio.read_dataset(path)


def noisy_dataset(cfg: ExperimentConfig):
    dataset = load_dataset(cfg)
    spec = cfg.noise_spec()
    if spec is None:
        return dataset, dataset.corrupted_count()
    return inject(dataset, spec)


def input_shape(cfg, dataset):
    if cfg.data.shape:
        return tuple(int(s) for s in cfg.data.shape.split(","))
    return (dataset.features.shape[1],)


def noise_report(cfg, dataset, corrupted):
    n_train = dataset.counts[0]
    c = dataset.classes
    pairs = [
        ("nominal_noise_rate", cfg.noise.rate if cfg.noise.kind != "none" else None),
        ("noise_kind", cfg.noise.kind),
        ("expected_effective_rate", cfg.noise.rate * (c - 1) / c if cfg.noise.kind == "symmetric" else None),
        ("corrupted", corrupted),
        ("n_train", n_train),
        ("effective_noise_rate", corrupted / n_train if n_train else 0.0),
    ]
    counts = confusion_counts(dataset)
    for i in range(c):
        pairs.append((f"confusion.{i}", " ".join(str(v) for v in counts[i])))
    return pairs


def cmd_inject(cfg: ExperimentConfig, out_path=None):
    """Write the corrupted dataset and a noise report next to it; returns the report pairs."""
    dataset, corrupted = noisy_dataset(cfg)
    out_path = Path(out_path or Path(cfg.out) / "dataset.jlds")
    fileio.write_dataset(out_path, dataset)
    report = noise_report(cfg, dataset, corrupted)
    fileio.write_kv(out_path.with_suffix(".noise.txt"), report)
    return report


# ------------------------------------------------------------ checkpoints


def save_checkpoint(ckpt_dir: Path, state: JointState):
    tmp = ckpt_dir.with_name(ckpt_dir.name + ".tmp")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    meta = [("epoch", state.epoch), ("mode", state.store.mode), ("window", state.buffer.window),
            ("buffer_len", len(state.buffer)), ("buffer_epochs", state.buffer.epoch_count)]
    for name, t in state.params.items():
        meta.append((f"shape.{name}", ",".join(str(s) for s in t.shape)))
        fileio.write_matrix(tmp / f"param.{name}.jlmx", t.values.reshape(t.shape[0], -1), epoch=state.epoch)
        fileio.write_matrix(tmp / f"momentum.{name}.jlmx", state.params.momentum[name].reshape(t.shape[0], -1), epoch=state.epoch)
    fileio.write_matrix(tmp / "labels.jlmx", state.store.current, state.store.mode, state.epoch)
    if state.buffer.window == "all":
        if len(state.buffer):
            fileio.write_matrix(tmp / "buffer.sum.jlmx", state.buffer._sum, epoch=state.epoch)
    else:
        for i, probs in enumerate(state.buffer.history):
            fileio.write_matrix(tmp / f"buffer.{i}.jlmx", probs, epoch=state.epoch)
    fileio.write_kv(tmp / "state.txt", meta)
    if ckpt_dir.exists():
        shutil.rmtree(ckpt_dir)
    tmp.rename(ckpt_dir)


def load_checkpoint(ckpt_dir: Path, initial: JointState) -> JointState:
    """Restore into the structure of ``initial`` (which supplies frozen noisy/truth labels)."""
    meta = fileio.read_kv(ckpt_dir / "state.txt")
    epoch = int(meta["epoch"])
    params = ParamSet()
    for name in initial.params:
        shape = tuple(int(s) for s in meta[f"shape.{name}"].split(","))
        params.add(name, fileio.read_matrix(ckpt_dir / f"param.{name}.jlmx")[0].reshape(shape))
        params.momentum[name] = fileio.read_matrix(ckpt_dir / f"momentum.{name}.jlmx")[0].reshape(shape)
    current, mode, _ = fileio.read_matrix(ckpt_dir / "labels.jlmx")
    old = initial.store
    store = LabelStore(current, old.original_noisy, old.ground_truth, mode)
    window = meta["window"]
    buffer = ProbBuffer(window if window == "all" else int(window))
    buffer.epoch_count = int(meta["buffer_epochs"])
    n = int(meta["buffer_len"])
    if window == "all":
        if n:
            buffer._sum = fileio.read_matrix(ckpt_dir / "buffer.sum.jlmx")[0]
            buffer._count = n
    else:
        for i in range(n):
            buffer.history.append(fileio.read_matrix(ckpt_dir / f"buffer.{i}.jlmx")[0])
    return JointState(epoch, params, store, buffer)


# ------------------------------------------------------------ run


def _status(out, status, **extra):
    fileio.write_kv(out / "status.txt", [("status", status), *extra.items()])


def cmd_run(cfg: ExperimentConfig, resume=True, stop_after=None):
    """Step 1 (joint) then step 2 (retrain); returns the summary as a dict.

    ``stop_after`` ends step 1 after that many epochs without finishing,
    leaving a resumable run directory (used to exercise resume).
    """
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create {out}: {e.strerror}") from e
    (out / "config.txt").write_text(cfg.to_text())
    dataset, corrupted = noisy_dataset(cfg)
    fileio.write_dataset(out / "dataset.jlds", dataset)
    spec = cfg.network_spec(input_shape(cfg, dataset), dataset.classes)
    joint = cfg.joint_config()
    opt1, opt2 = cfg.optimizer("step1"), cfg.optimizer("step2")

    ckpt = out / "checkpoint"
    metrics_path = out / "step1_metrics.csv"
    state = initial_joint_state(dataset, spec, joint)
    if resume and (ckpt / "state.txt").exists():
        state = load_checkpoint(ckpt, state)
        done = fileio.read_metrics(metrics_path)[: state.epoch] if metrics_path.exists() else []
        if len(done) != state.epoch:
            raise StorageError(f"{metrics_path} has {len(done)} rows, checkpoint is at epoch {state.epoch}")
        state.metrics = done
        fileio.write_metrics(metrics_path, done)
        log.info("resuming step 1 at epoch %d", state.epoch)
    else:
        for stale in ("step1_metrics.csv", "step2_metrics.csv", "summary.txt", "labels.jlmx"):
            (out / stale).unlink(missing_ok=True)
        if ckpt.exists():
            shutil.rmtree(ckpt)
        fileio.write_metrics(metrics_path, [])

    class _Stop(Exception):
        pass

    def on_epoch_end(st):
        fileio.append_metrics(metrics_path, st.metrics[-1])
        save_checkpoint(ckpt, st)
        _status(out, "running", epoch=st.epoch)
        if stop_after is not None and st.epoch >= stop_after:
            raise _Stop

    _status(out, "running", epoch=state.epoch)
    try:
        store, metrics1, _ = run_joint(dataset, spec, joint, opt1, state=state, on_epoch_end=on_epoch_end)
    except _Stop:
        return None
    except NumericalError as e:
        _status(out, "failed", epoch=state.epoch, error=str(e))
        raise
    fileio.write_matrix(out / "labels.jlmx", store.current, store.mode, joint.num_epochs)

    _, metrics2 = run_final(dataset, store.current, spec, opt2, cfg.step2.epochs, seed=cfg.seed)
    fileio.write_metrics(out / "step2_metrics.csv", metrics2)
    summary = summarize(cfg, dataset, corrupted, store, metrics1, metrics2)
    fileio.write_kv(out / "summary.txt", summary.items())
    _status(out, "complete", epoch=joint.num_epochs)
    return summary


def summarize(cfg, dataset, corrupted, store, metrics1, metrics2):
    n_train = dataset.counts[0]
    best, last = best_and_last(metrics2) if metrics2 else (None, None)
    s = {
        "status": "complete",
        "seed": cfg.seed,
        "noise_kind": cfg.noise.kind,
        "nominal_noise_rate": cfg.noise.rate,
        "effective_noise_rate": corrupted / n_train if n_train else 0.0,
        "n_train": n_train,
        "recovery_accuracy": store.recovery_accuracy(),
        "step1_test_last": metrics1[-1].test_acc if metrics1 else None,
        "best_epoch": best.epoch if best else None,
        "val_best": best.val_acc if best else None,
        "test_best": best.test_acc if best else None,
        "test_last": last.test_acc if last else None,
    }
    for b in bin_recovery_report(store)[:-1]:
        s[f"bin.{b.low}-{b.high}.count"] = b.count
        s[f"bin.{b.low}-{b.high}.accuracy"] = b.accuracy
    return s


# ------------------------------------------------------------ sweep

SWEEP_AXES = {
    "alpha": "joint.alpha",
    "beta": "joint.beta",
    "learning_rate": "step1.lr",
    "t1": "joint.t1",
    "t2": "joint.t2",
    "noise_rate": "noise.rate",
    "seed": "seed",  # repeated trials of one configuration
}


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    base: ExperimentConfig

    def __post_init__(self):
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"unknown sweep axis {self.axis!r}; choose from {', '.join(SWEEP_AXES)}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        object.__setattr__(self, "values", tuple(sorted(self.values, key=float)))

    def cell_config(self, i):
        v = self.values[i]
        return self.base.updated({SWEEP_AXES[self.axis]: str(v), "out": str(Path(self.base.out) / f"{self.axis}_{v}")})


def _sweep_cell(args):
    sweep, i = args
    cfg = sweep.cell_config(i)
    try:
        summary = cmd_run(cfg, resume=False)
        return summary["val_best"], summary["test_last"], ""
    except JointLabelError as e:
        return None, None, f"{type(e).__name__}: {e}"


def cmd_sweep(sweep: SweepSpec, jobs=1):
    """One full run per axis value; writes sweep.csv and returns its rows."""
    cells = [(sweep, i) for i in range(len(sweep.values))]
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    scores = [r[0] for r in results]
    valid = [s for s in scores if s is not None]
    best = scores.index(max(valid)) if valid else None
    rows = []
    for i, (v, (val, test, err)) in enumerate(zip(sweep.values, results)):
        rows.append({"value": v, "val_accuracy": val, "test_last": test, "best": int(i == best), "error": err})
    lines = ["value,val_accuracy,test_last,best,error"]
    for r in rows:
        cells_ = [str(r["value"]), "" if r["val_accuracy"] is None else repr(r["val_accuracy"]),
                  "" if r["test_last"] is None else repr(r["test_last"]), str(r["best"]), r["error"].replace(",", ";")]
        lines.append(",".join(cells_))
    Path(sweep.base.out).mkdir(parents=True, exist_ok=True)
    fileio._write_atomic(Path(sweep.base.out) / "sweep.csv", "\n".join(lines) + "\n")
    return rows


# ------------------------------------------------------------ plot data

PLOT_SERIES = {
    "test_accuracy": ("test_acc",),
    "train_loss": ("total", "l_c", "l_p", "l_e"),
    "recovery_accuracy": ("recovery_acc",),
}


def cmd_plotdata(run_dir):
    """Split step-1 metrics into one CSV per curve under ``run_dir/plots``; returns written paths."""
    run_dir = Path(run_dir)
    path = run_dir / "step1_metrics.csv"
    if not path.exists():
        raise UsageError(f"no metrics in {run_dir}")
    metrics = fileio.read_metrics(path)
    written = []
    for name, cols in PLOT_SERIES.items():
        lines = [",".join(("epoch",) + cols)]
        for m in metrics:
            lines.append(",".join([str(m.epoch)] + [fileio._fmt(getattr(m, c)) for c in cols]))
        target = run_dir / "plots" / f"{name}.csv"
        fileio._write_atomic(target, "\n".join(lines) + "\n")
        written.append(target)
    return written


# ------------------------------------------------------------ probe

PROBE_RATES = (0.1, 0.5, 0.9)


def cmd_probe(cfg: ExperimentConfig, lr_settings, rates=PROBE_RATES, epochs=100):
    """Memorisation grid; ``lr_settings`` maps a name to (OptimizerConfig, epochs)."""
    dataset = load_dataset(cfg)
    spec = cfg.network_spec(input_shape(cfg, dataset), dataset.classes)
    rows = []
    for name, (opt, n_epochs) in lr_settings.items():
        for cell in memorization_probe(dataset, spec, [opt], rates, n_epochs, seed=cfg.seed):
            rows.append((name, cell))
    lines = ["setting,noise_rate,final_train_loss,final_test_acc,best_test_acc"]
    for name, c in rows:
        lines.append(f"{name},{c.rate!r},{float(c.final_train_loss)!r},{c.final_test_acc!r},{c.best_test_acc!r}")
    fileio._write_atomic(Path(cfg.out) / "probe.csv", "\n".join(lines) + "\n")
    return rows


# ------------------------------------------------------------ gradcheck


def gradcheck_cases(n_configs=20, seed=0):
    """Randomised (name, spec, params, loss_fn, batch) cases covering every layer and loss."""
    g = rngmod.stream(seed, "gradcheck")
    cases = []
    for k in range(n_configs):
        c = int(g.integers(2, 5))
        b = int(g.integers(2, 6))
        if k % 4 == 3:
            spec = NetworkSpec([Conv2d(2, 3, 3, int(g.integers(1, 3)), 1), ReLU(), GlobalAvgPool(), Dense(3, c), Softmax(c)], (2, 5, 5))
            batch = g.normal(size=(b, 2, 5, 5))
        else:
            d = int(g.integers(2, 5))
            spec = mlp_spec([d, int(g.integers(3, 7)), c])
            batch = g.normal(size=(b, d))
        params = init_params(spec, g)
        labels = g.dirichlet(np.ones(c), size=b)
        hard = onehot(g.integers(0, c, b), c)
        t = g.dirichlet(np.ones(c), size=c)
        prior = losses.Prior(g.dirichlet(np.ones(c)))
        loss_fns = {
            "kl": lambda s, y=labels: (losses.kl_classification_loss(y, s), losses.kl_classification_grad(y, s)),
            "prior": lambda s, p=prior: (losses.prior_loss(s, p), losses.prior_grad(s, p)),
            "entropy": lambda s: (losses.entropy_loss(s), losses.entropy_grad(s)),
            "cross_entropy": lambda s, y=hard: (losses.cross_entropy_loss(y, s), losses.cross_entropy_grad(y, s)),
            "forward_corrected": lambda s, y=hard, t=t: (losses.forward_corrected_loss(y, s, t), losses.forward_corrected_grad(y, s, t)),
            "total": lambda s, y=labels, p=prior: (losses.total_loss(y, s, p, 1.2, 0.8).total, losses.total_loss_grad(y, s, p, 1.2, 0.8)),
        }
        kind = "conv" if k % 4 == 3 else "mlp"
        for lname, fn in loss_fns.items():
            cases.append((f"config{k:02d}-{kind}-{lname}", spec, params, fn, batch))
    return cases


def cmd_gradcheck(n_configs=20, tol=1e-4, seed=0, echo=print):
    """Run every gradient case; returns (all_passed, worst_error)."""
    worst, ok = 0.0, True
    for name, spec, params, fn, batch in gradcheck_cases(n_configs, seed):
        err = gradient_check(spec, params, fn, batch, eps=1e-5, check_input=True)
        passed = err <= tol
        ok &= passed
        worst = max(worst, err)
        echo(f"{'PASS' if passed else 'FAIL'} {name} max_rel_err={err:.2e}")
    return ok, worst
