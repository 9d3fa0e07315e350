"""The evolving training-label matrix and the rules that rewrite it."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError, UsageError

HARD = "hard"
SOFT = "soft"
ALL = "all"
ROW_TOL = 1e-6

# (low, high] ranges on the max label probability
RECOVERY_BINS = ((0.99, 1.0), (0.95, 0.99), (0.9, 0.95), (0.0, 0.9))


def onehot(indices, c):
    indices = np.asarray(indices, dtype=np.int64)
    out = np.zeros((len(indices), c))
    out[np.arange(len(indices)), indices] = 1.0
    return out


def _frozen(a):
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


def _check_stochastic(m, what, tol=ROW_TOL):
    if m.ndim != 2 or np.any(m < -tol) or np.any(m > 1 + tol) or np.any(np.abs(m.sum(axis=1) - 1) > tol):
        raise ContractError(f"{what} rows must be probability vectors")


@dataclass
class LabelStore:
    """Current labels plus the frozen noisy originals and (optionally) the truth."""

    current: np.ndarray
    original_noisy: np.ndarray
    ground_truth: np.ndarray | None = None
    mode: str = SOFT

    def __post_init__(self):
        if self.mode not in (HARD, SOFT):
            raise ConfigError(f"label mode must be 'hard' or 'soft', got {self.mode!r}")
        self.current = np.array(self.current, dtype=np.float64)
        self.original_noisy = _frozen(self.original_noisy)
        if self.ground_truth is not None:
            self.ground_truth = _frozen(self.ground_truth)
            if self.ground_truth.shape != self.current.shape:
                raise ContractError("ground truth shape differs from labels")
        if self.original_noisy.shape != self.current.shape:
            raise ContractError("original labels shape differs from current labels")
        self.validate()

    @classmethod
    def from_noisy(cls, noisy_idx, c, mode=SOFT, truth_idx=None):
        """Labels start as the noisy one-hot vectors in both modes."""
        noisy = onehot(noisy_idx, c)
        truth = None if truth_idx is None else onehot(truth_idx, c)
        return cls(noisy.copy(), noisy, truth, mode)

    @property
    def n(self):
        return self.current.shape[0]

    @property
    def c(self):
        return self.current.shape[1]

    def validate(self):
        _check_stochastic(self.current, "current labels")
        if self.mode == HARD and not np.all((self.current == 0) | (self.current == 1)):
            raise ContractError("hard-mode labels must be one-hot")

    def argmax(self):
        return self.current.argmax(axis=1)

    def recovery_accuracy(self) -> float:
        """Percentage of samples whose label argmax equals the hidden truth."""
        if self.ground_truth is None:
            raise UsageError("recovery accuracy needs ground truth")
        return 100.0 * float(np.mean(self.argmax() == self.ground_truth.argmax(axis=1)))


@dataclass
class ProbBuffer:
    """Ring buffer of the last ``window`` full-set softmax snapshots.

    ``window="all"`` keeps every epoch; only a running sum is stored then.
    """

    window: int | str = 10
    history: deque = field(default_factory=deque)
    epoch_count: int = 0
    _sum: np.ndarray | None = None
    _count: int = 0

    def __post_init__(self):
        if self.window != ALL and (not isinstance(self.window, (int, np.integer)) or self.window < 1):
            raise ConfigError(f"averaging window must be a positive integer or 'all', got {self.window!r}")

    def __len__(self):
        return self._count if self.window == ALL else len(self.history)


def record_epoch_probs(buffer: ProbBuffer, epoch_probs) -> ProbBuffer:
    probs = np.array(epoch_probs, dtype=np.float64)
    _check_stochastic(probs, "epoch probabilities")
    ref = buffer._sum if buffer.window == ALL else (buffer.history[0] if buffer.history else None)
    if ref is not None and ref.shape != probs.shape:
        raise ContractError(f"epoch probabilities {probs.shape} do not match buffer {ref.shape}")
    if buffer.window == ALL:
        buffer._sum = probs if buffer._sum is None else buffer._sum + probs
        buffer._count += 1
    else:
        buffer.history.append(probs)
        while len(buffer.history) > buffer.window:
            buffer.history.popleft()
    buffer.epoch_count += 1
    return buffer


def averaged_probs(buffer: ProbBuffer) -> np.ndarray:
    """Element-wise mean of the retained snapshots (all of them if fewer than window)."""
    if len(buffer) == 0:
        raise UsageError("no epoch probabilities recorded yet")
    if buffer.window == ALL:
        return buffer._sum / buffer._count
    return np.mean(np.stack(buffer.history), axis=0)


# ------------------------------------------------------------- updates


def _argmax_onehot(probs):
    # np.argmax returns the first maximum: ties go to the lowest class index
    return onehot(np.argmax(probs, axis=1), probs.shape[1])


def hard_update(store: LabelStore, probs, topk=ALL):
    """Reassign one-hot labels to the predicted class; returns (store, changed_count).

    With an integer ``topk`` only the samples the network trusts least in
    their current label (lowest probability on it, ties by index) are
    candidates, and at most ``topk`` of those whose prediction disagrees
    are rewritten.
    """
    if store.mode != HARD:
        raise UsageError("hard_update needs a hard-mode label store")
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != store.current.shape:
        raise ContractError(f"probs {probs.shape} do not match labels {store.current.shape}")
    target = np.argmax(probs, axis=1)
    current = store.argmax()
    differs = target != current
    if topk == ALL:
        rows = np.flatnonzero(differs)
    else:
        if int(topk) < 1:
            raise ConfigError("topk must be a positive integer or 'all'")
        conf = probs[np.arange(store.n), current]
        order = np.lexsort((np.arange(store.n), conf))
        rows = order[differs[order]][: int(topk)]
    store.current[rows] = onehot(target[rows], store.c)
    store.validate()
    return store, int(len(rows))


def soft_update(store: LabelStore, probs):
    if store.mode != SOFT:
        raise UsageError("soft_update needs a soft-mode label store")
    probs = np.array(probs, dtype=np.float64)
    if probs.shape != store.current.shape:
        raise ContractError(f"probs {probs.shape} do not match labels {store.current.shape}")
    _check_stochastic(probs, "probs")
    changed = int(np.count_nonzero(np.argmax(probs, axis=1) != store.argmax()))
    store.current = probs
    return store, changed


@dataclass(frozen=True)
class UpdateSchedule:
    """Labels are rewritten at the end of epochs t1 <= epoch < t2 (0-based)."""

    t1: int
    t2: float = float("inf")
    topk: int | str = ALL

    def __post_init__(self):
        if not 0 <= self.t1 <= self.t2:
            raise ConfigError(f"need 0 <= t1 <= t2, got t1={self.t1}, t2={self.t2}")

    def active(self, epoch):
        return self.t1 <= epoch < self.t2


def maybe_update(store: LabelStore, buffer: ProbBuffer, schedule: UpdateSchedule, epoch: int):
    """Apply the label rule for ``store.mode`` if ``epoch`` is inside the schedule.

    Returns ``(store, did_update, changed_count)``; ``changed_count`` counts
    samples whose label argmax moved.
    """
    if not schedule.active(epoch):
        return store, False, 0
    probs = averaged_probs(buffer)
    if store.mode == HARD:
        store, changed = hard_update(store, probs, schedule.topk)
    else:
        store, changed = soft_update(store, probs)
    return store, True, changed


# ------------------------------------------------------------- reporting


@dataclass(frozen=True)
class BinRow:
    low: float
    high: float
    accuracy: float | None
    count: int


def bin_recovery_report(store: LabelStore, ground_truth=None) -> list[BinRow]:
    """Recovery accuracy grouped by each label's max probability.

    Returns one row per range in RECOVERY_BINS plus a final (0, 1] overall
    row. Empty bins report ``accuracy=None``.
    """
    truth = store.ground_truth if ground_truth is None else np.asarray(ground_truth)
    if truth is None:
        raise UsageError("bin recovery report needs ground truth")
    truth_idx = truth.argmax(axis=1) if truth.ndim == 2 else truth
    top = np.minimum(store.current.max(axis=1), 1.0)
    correct = store.argmax() == truth_idx
    rows = []
    for low, high in RECOVERY_BINS:
        mask = (top > low) & (top <= high)
        count = int(mask.sum())
        acc = 100.0 * float(correct[mask].mean()) if count else None
        rows.append(BinRow(low, high, acc, count))
    rows.append(BinRow(0.0, 1.0, 100.0 * float(correct.mean()), int(len(correct))))
    return rows
