"""SGD training loops: alternating label/parameter optimisation (step 1),
retraining on recovered labels (step 2), and the memorisation probe."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import losses
from . import rng as rngmod
from .autodiff import Network, NetworkSpec, ParamSet, init_params
from .errors import ConfigError, NumericalError, UsageError
from .labels import ALL, SOFT, LabelStore, ProbBuffer, UpdateSchedule, maybe_update, onehot, record_epoch_probs
from .noise import TEST, TRAIN, VAL, LabeledDataset, inject_symmetric


@dataclass(frozen=True)
class OptimizerConfig:
    """Piecewise-constant learning rate: ``lr_schedule`` holds (first_epoch, lr) points."""

    lr_schedule: tuple = ((0, 0.1),)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128

    def __post_init__(self):
        sched = tuple(sorted((int(e), float(lr)) for e, lr in self.lr_schedule))
        object.__setattr__(self, "lr_schedule", sched)
        if not sched or sched[0][0] != 0:
            raise ConfigError("learning-rate schedule must start at epoch 0")
        if any(lr <= 0 for _, lr in sched):
            raise ConfigError("learning rates must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch size must be positive")

    @classmethod
    def step_decay(cls, lr, milestones=(), factor=0.1, **kw):
        """``lr`` divided by 1/factor at each milestone epoch."""
        points = [(0, lr)] + [(m, lr * factor ** (i + 1)) for i, m in enumerate(milestones)]
        return cls(tuple(points), **kw)

    def lr_at(self, epoch):
        lr = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if epoch >= start:
                lr = value
        return lr


# step-2 schedule used for CIFAR-10: 120 epochs, lr 0.2 divided by 10 after 40 and 80
CIFAR_STEP2 = OptimizerConfig.step_decay(0.2, (40, 80), momentum=0.9, weight_decay=1e-4, batch_size=128)
CIFAR_STEP2_EPOCHS = 120

# per-noise-rate (alpha, beta, lr) chosen on SN-CIFAR validation accuracy
SN_CIFAR_HYPERPARAMS = {
    0.0: (1.2, 0.8, 0.01),
    0.1: (1.2, 0.8, 0.02),
    0.3: (1.2, 0.8, 0.03),
    0.5: (1.2, 0.8, 0.04),
    0.7: (1.2, 0.8, 0.08),
    0.9: (0.8, 0.4, 0.12),
}


@dataclass(frozen=True)
class JointRunConfig:
    alpha: float = 1.2
    beta: float = 0.8
    t1: int | None = None  # None -> 15% of num_epochs
    t2: float = math.inf
    topk: int | str = ALL
    window: int | str = 10
    mode: str = SOFT
    num_epochs: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")
        if self.num_epochs < 0:
            raise ConfigError("num_epochs must be non-negative")
        self.schedule()

    def schedule(self) -> UpdateSchedule:
        t1 = int(round(0.15 * self.num_epochs)) if self.t1 is None else self.t1
        return UpdateSchedule(t1, self.t2, self.topk)


@dataclass
class MetricsRecord:
    epoch: int
    l_c: float
    l_p: float
    l_e: float
    total: float
    val_acc: float | None
    test_acc: float | None
    recovery_acc: float | None
    labels_changed: int = 0


# ------------------------------------------------------------ primitives


def sgd_step(params: ParamSet, opt: OptimizerConfig, epoch: int):
    """v <- momentum * v + grad + weight_decay * theta;  theta <- theta - lr * v."""
    lr = opt.lr_at(epoch)
    for name, t in params.items():
        if t.grad is None:
            raise UsageError(f"parameter {name} has no gradient")
        if not np.all(np.isfinite(t.grad)):
            raise NumericalError(f"non-finite gradient in parameter {name}")
        v = params.momentum[name]
        v *= opt.momentum
        v += t.grad
        if opt.weight_decay:
            v += opt.weight_decay * t.values
        t.values -= lr * v
    return params


def accuracy(probs, truth) -> float:
    """Percent of argmax predictions (ties to the lowest index) matching ``truth``, two decimals."""
    truth = np.asarray(truth)
    if len(truth) == 0:
        raise UsageError("cannot score an empty split")
    return round(100.0 * float(np.mean(np.argmax(probs, axis=1) == truth)), 2)


def evaluate(params: ParamSet, spec: NetworkSpec, dataset: LabeledDataset, split=TEST) -> float:
    x, truth, _ = dataset.subset(split)
    return accuracy(Network(spec, params).predict(x), truth)


def _maybe_eval(net, dataset, split):
    idx = dataset.indices(split)
    if len(idx) == 0:
        return None
    return accuracy(net.predict(dataset.features[idx]), dataset.truth[idx])


LossGrad = Callable[[np.ndarray, np.ndarray], tuple]


def joint_objective(alpha, beta, prior):
    def fn(labels, probs):
        br = losses.total_loss(labels, probs, prior, alpha, beta)
        return br, losses.total_loss_grad(labels, probs, prior, alpha, beta)

    return fn


def cross_entropy_objective(labels, probs):
    value = losses.cross_entropy_loss(labels, probs)
    return losses.LossBreakdown(value, 0.0, 0.0, value, 0.0, 0.0), losses.cross_entropy_grad(labels, probs)


def train_epoch(net: Network, x, labels, objective: LossGrad, opt: OptimizerConfig, epoch: int, g: np.random.Generator):
    """One shuffled pass of minibatch SGD; returns the sample-weighted mean breakdown."""
    n = len(x)
    order = g.permutation(n)
    sums = np.zeros(4)
    alpha = beta = 0.0
    for start in range(0, n, opt.batch_size):
        idx = order[start : start + opt.batch_size]
        net.params.zero_grad()
        probs = net.forward(x[idx])
        br, grad = objective(labels[idx], probs)
        if not math.isfinite(br.total):
            raise NumericalError(f"loss became non-finite at epoch {epoch}")
        net.backward(grad)
        sgd_step(net.params, opt, epoch)
        sums += len(idx) * np.array([br.l_c, br.l_p, br.l_e, br.total])
        alpha, beta = br.alpha, br.beta
    l_c, l_p, l_e, _ = sums / n
    # total rebuilt from the averaged parts so the breakdown identity holds exactly
    return losses.LossBreakdown(l_c, l_p, l_e, l_c + alpha * l_p + beta * l_e, alpha, beta)


# ------------------------------------------------------------ step 1


@dataclass
class JointState:
    """Everything needed to continue a step-1 run from ``epoch``."""

    epoch: int
    params: ParamSet
    store: LabelStore
    buffer: ProbBuffer
    metrics: list = field(default_factory=list)


def initial_joint_state(dataset: LabeledDataset, spec: NetworkSpec, config: JointRunConfig) -> JointState:
    train = dataset.indices(TRAIN)
    store = LabelStore.from_noisy(dataset.noisy[train], dataset.classes, config.mode, dataset.truth[train])
    params = init_params(spec, rngmod.stream(config.seed, "init"))
    return JointState(0, params, store, ProbBuffer(config.window))


def run_joint(dataset: LabeledDataset, spec: NetworkSpec, config: JointRunConfig, opt: OptimizerConfig,
              state: JointState | None = None, on_epoch_end: Callable[[JointState], None] | None = None,
              prior: losses.Prior | None = None):
    """Alternate SGD on the combined loss with label updates, one round per epoch.

    Returns ``(store, metrics, params)``. Pass a ``state`` saved by
    ``on_epoch_end`` to resume; the shuffle of every epoch is derived from
    (seed, epoch) so a resumed run matches an uninterrupted one.
    """
    if spec.classes != dataset.classes:
        raise ConfigError(f"network has {spec.classes} outputs, dataset has {dataset.classes} classes")
    state = state or initial_joint_state(dataset, spec, config)
    schedule = config.schedule()
    prior = prior or losses.Prior.uniform(dataset.classes)
    objective = joint_objective(config.alpha, config.beta, prior)
    x = dataset.features[dataset.indices(TRAIN)]
    net = Network(spec, state.params)
    for epoch in range(state.epoch, config.num_epochs):
        g = rngmod.stream(config.seed, "shuffle", epoch)
        br = train_epoch(net, x, state.store.current, objective, opt, epoch, g)
        record_epoch_probs(state.buffer, net.predict(x))
        _, did_update, changed = maybe_update(state.store, state.buffer, schedule, epoch)
        state.metrics.append(MetricsRecord(
            epoch, br.l_c, br.l_p, br.l_e, br.total,
            _maybe_eval(net, dataset, VAL), _maybe_eval(net, dataset, TEST),
            state.store.recovery_accuracy() if state.store.ground_truth is not None else None,
            changed if did_update else 0,
        ))
        state.epoch = epoch + 1
        if on_epoch_end is not None:
            on_epoch_end(state)
    return state.store, state.metrics, state.params


# ------------------------------------------------------------ step 2


def run_final(dataset: LabeledDataset, recovered_labels, spec: NetworkSpec, opt: OptimizerConfig,
              num_epochs: int, seed: int = 0, loss: str = "kl", init_stream: str = "final_init"):
    """Train freshly initialised parameters on fixed labels (no label updates).

    ``loss="kl"`` uses the classification KL term only; ``loss="ce"``
    plain cross entropy (labels must be one-hot). Returns ``(params, metrics)``.
    """
    labels = np.asarray(recovered_labels, dtype=np.float64)
    if labels.ndim == 1:
        labels = onehot(labels, dataset.classes)
    params = init_params(spec, rngmod.stream(seed, init_stream))
    net = Network(spec, params)
    x = dataset.features[dataset.indices(TRAIN)]
    if loss == "kl":
        objective = joint_objective(0.0, 0.0, losses.Prior.uniform(dataset.classes))
    elif loss == "ce":
        objective = cross_entropy_objective
    else:
        raise ConfigError(f"unknown step-2 loss {loss!r}")
    metrics = []
    for epoch in range(num_epochs):
        br = train_epoch(net, x, labels, objective, opt, epoch, rngmod.stream(seed, "final_shuffle", epoch))
        metrics.append(MetricsRecord(epoch, br.l_c, br.l_p, br.l_e, br.total,
                                     _maybe_eval(net, dataset, VAL), _maybe_eval(net, dataset, TEST), None, 0))
    return params, metrics


def best_and_last(metrics: Sequence[MetricsRecord]):
    """(best, last) records; best has the highest val accuracy, earliest epoch on ties."""
    if not metrics:
        raise UsageError("no metrics recorded")
    best = metrics[0]
    for m in metrics[1:]:
        if m.val_acc is not None and (best.val_acc is None or m.val_acc > best.val_acc):
            best = m
    return best, metrics[-1]


# ------------------------------------------------------------ probe


@dataclass
class ProbeCell:
    lr: object
    rate: float
    final_train_loss: float
    final_test_acc: float
    best_test_acc: float
    train_loss_curve: list
    test_acc_curve: list


def _as_opt(lr, base: OptimizerConfig):
    if isinstance(lr, OptimizerConfig):
        return lr
    sched = ((0, float(lr)),) if np.isscalar(lr) else tuple(lr)
    return OptimizerConfig(sched, base.momentum, base.weight_decay, base.batch_size)


def memorization_probe(dataset: LabeledDataset, spec: NetworkSpec, lr_values, noise_rates, epochs: int,
                       seed: int = 0, opt: OptimizerConfig | None = None):
    """Cross-entropy training on symmetric-noise labels for every (lr, rate) pair.

    Each entry of ``lr_values`` is a constant learning rate, a list of
    (epoch, lr) points, or a full OptimizerConfig. Train loss is the
    epoch mean of the minibatch cross entropy against the noisy labels;
    ``final_train_loss`` is its value in the last epoch.
    """
    if epochs < 1:
        raise ConfigError("probe needs at least one epoch")
    base = opt or OptimizerConfig()
    grid = []
    for lr in lr_values:
        o = _as_opt(lr, base)
        for r in noise_rates:
            noisy, _ = inject_symmetric(dataset, r, seed)
            params = init_params(spec, rngmod.stream(seed, "init"))
            net = Network(spec, params)
            train = noisy.indices(TRAIN)
            x = noisy.features[train]
            labels = onehot(noisy.noisy[train], noisy.classes)
            losses_curve, acc_curve = [], []
            for epoch in range(epochs):
                br = train_epoch(net, x, labels, cross_entropy_objective, o, epoch, rngmod.stream(seed, "shuffle", epoch))
                losses_curve.append(br.total)
                acc_curve.append(_maybe_eval(net, noisy, TEST))
            grid.append(ProbeCell(lr, r, float(losses_curve[-1]), acc_curve[-1], max(acc_curve), losses_curve, acc_curve))
    return grid
