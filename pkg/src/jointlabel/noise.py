"""Noisy dataset construction: corruption models, transition matrices,
k-means++ pseudo-labels and synthetic Gaussian blobs."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from . import rng as rngmod
from .errors import ConfigError

SYMMETRIC = "symmetric"
ASYMMETRIC = "asymmetric"
PSEUDO = "pseudo"

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "val", "test")

CIFAR10_CLASSES = ("airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck")
# truck->automobile, bird->airplane, deer->horse, cat<->dog
CIFAR10_ASYM = ((9, 1), (2, 0), (4, 7), (3, 5), (5, 3))
PAIR_PRESETS = {"cifar10-asym": CIFAR10_ASYM}


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = SYMMETRIC
    rate: float = 0.0
    pair_map: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (SYMMETRIC, ASYMMETRIC, PSEUDO):
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError(f"noise rate must be in [0, 1], got {self.rate}")
        pairs = tuple((int(a), int(b)) for a, b in resolve_pairs(self.pair_map))
        object.__setattr__(self, "pair_map", pairs)
        sources = [a for a, _ in pairs]
        if len(set(sources)) != len(sources):
            raise ConfigError("pair_map sources must be distinct")


def resolve_pairs(pair_map):
    if isinstance(pair_map, str):
        try:
            return PAIR_PRESETS[pair_map]
        except KeyError:
            raise ConfigError(f"unknown pair-map preset {pair_map!r}") from None
    return tuple(pair_map)


@dataclass
class LabeledDataset:
    """Features with integer class labels and a split tag per sample.

    ``noisy`` differs from ``truth`` only on the train split.
    """

    features: np.ndarray
    truth: np.ndarray
    noisy: np.ndarray
    split: np.ndarray
    classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.truth = np.asarray(self.truth, dtype=np.int64)
        self.noisy = np.asarray(self.noisy, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=np.int64)
        n = len(self.features)
        if not (len(self.truth) == len(self.noisy) == len(self.split) == n):
            raise ConfigError("features, labels and split tags must have equal length")
        if n and (self.truth.min() < 0 or self.truth.max() >= self.classes):
            raise ConfigError("class label out of range")
        if np.any((self.split != TRAIN) & (self.noisy != self.truth)):
            raise ConfigError("only the train split may carry corrupted labels")

    def indices(self, split):
        return np.flatnonzero(self.split == split)

    def subset(self, split):
        idx = self.indices(split)
        return self.features[idx], self.truth[idx], self.noisy[idx]

    @property
    def counts(self):
        return tuple(int(np.sum(self.split == s)) for s in (TRAIN, VAL, TEST))

    def corrupted_count(self):
        return int(np.sum(self.noisy != self.truth))

    def with_noisy(self, noisy):
        return replace(self, noisy=np.asarray(noisy, dtype=np.int64))


# ------------------------------------------------------------ injectors


def inject_symmetric(dataset: LabeledDataset, r: float, seed: int):
    """With probability r replace each train label by a uniform draw over all classes.

    The draw may return the true class, so the expected changed fraction
    is r * (c - 1) / c. Returns ``(dataset, corrupted_count)``.
    """
    if not 0.0 <= r <= 1.0:
        raise ConfigError(f"noise rate must be in [0, 1], got {r}")
    train = dataset.indices(TRAIN)
    g = rngmod.stream(seed, "noise")
    hit = g.random(len(train)) < r
    draw = g.integers(0, dataset.classes, len(train))
    noisy = dataset.truth.copy()
    noisy[train] = np.where(hit, draw, dataset.truth[train])
    out = dataset.with_noisy(noisy)
    return out, out.corrupted_count()


def inject_asymmetric(dataset: LabeledDataset, r: float, pair_map, seed: int):
    """Flip each train sample of a mapped source class to its target with probability r."""
    if not 0.0 <= r <= 1.0:
        raise ConfigError(f"noise rate must be in [0, 1], got {r}")
    pairs = resolve_pairs(pair_map)
    mapping = np.arange(dataset.classes)
    for a, b in pairs:
        if not (0 <= a < dataset.classes and 0 <= b < dataset.classes):
            raise ConfigError(f"pair ({a} -> {b}) has a class index outside [0, {dataset.classes})")
        mapping[a] = b
    train = dataset.indices(TRAIN)
    g = rngmod.stream(seed, "noise")
    hit = g.random(len(train)) < r
    noisy = dataset.truth.copy()
    noisy[train] = np.where(hit, mapping[dataset.truth[train]], dataset.truth[train])
    out = dataset.with_noisy(noisy)
    return out, out.corrupted_count()


def inject(dataset: LabeledDataset, spec: NoiseSpec):
    if spec.kind == SYMMETRIC:
        return inject_symmetric(dataset, spec.rate, spec.seed)
    if spec.kind == ASYMMETRIC:
        return inject_asymmetric(dataset, spec.rate, spec.pair_map, spec.seed)
    raise ConfigError("pseudo labels come from kmeanspp_pseudo_labels, not a rate-driven injector")


def build_transition_matrix(spec: NoiseSpec, c: int) -> np.ndarray:
    """T[i, j] = p(noisy = j | true = i) for the injector conventions above."""
    r = spec.rate
    if spec.kind == SYMMETRIC:
        return (1.0 - r) * np.eye(c) + (r / c) * np.ones((c, c))
    if spec.kind == ASYMMETRIC:
        t = np.eye(c)
        for a, b in spec.pair_map:
            if not (0 <= a < c and 0 <= b < c):
                raise ConfigError(f"pair ({a} -> {b}) outside {c} classes")
            if a != b:
                t[a, a] = 1.0 - r
                t[a, b] = r
        return t
    raise ConfigError("pseudo-label noise has no closed-form transition matrix")


def confusion_counts(dataset: LabeledDataset, split=TRAIN):
    """counts[i, j] = number of samples with truth i labelled j."""
    idx = dataset.indices(split)
    out = np.zeros((dataset.classes, dataset.classes), dtype=np.int64)
    np.add.at(out, (dataset.truth[idx], dataset.noisy[idx]), 1)
    return out


# ------------------------------------------------------------ k-means++


def _sqdist(x, centers):
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeanspp_seed(features, k, g):
    n = len(features)
    centers = [features[g.integers(n)]]
    d2 = ((features - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            i = g.integers(n)
        else:
            i = g.choice(n, p=d2 / total)
        centers.append(features[i])
        d2 = np.minimum(d2, ((features - features[i]) ** 2).sum(axis=1))
    return np.array(centers)


def kmeanspp_pseudo_labels(features, k, seed, max_iters=100, truth=None):
    """k-means++ seeding followed by Lloyd iterations.

    Returns ``(labels, inertia)``. When ``truth`` is given, each cluster is
    renamed to the majority true class of its members so the labels can be
    scored as class predictions; otherwise raw cluster ids are returned.
    """
    x = np.asarray(features, dtype=np.float64)
    n = len(x)
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= k <= n, got k={k}, n={n}")
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")
    g = rngmod.stream(seed, "kmeans")
    centers = kmeanspp_seed(x, k, g)
    assign = np.full(n, -1)
    for _ in range(max_iters):
        new = _sqdist(x, centers).argmin(axis=1)
        if np.array_equal(new, assign):
            break
        assign = new
        for j in range(k):
            members = x[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
    assign = _sqdist(x, centers).argmin(axis=1)
    inertia = float(((x - centers[assign]) ** 2).sum())
    if truth is None:
        return assign, inertia
    truth = np.asarray(truth, dtype=np.int64)
    mapping = np.zeros(k, dtype=np.int64)
    for j in range(k):
        members = truth[assign == j]
        mapping[j] = np.bincount(members).argmax() if len(members) else j
    return mapping[assign], inertia


# ------------------------------------------------------------ blobs


def class_means(c, d, separation):
    """Class centres with pairwise distance >= separation.

    A regular simplex (exactly ``separation`` apart) when c <= d + 1,
    otherwise points of a cubic lattice with spacing ``separation``.
    """
    if c <= d + 1:
        v = np.eye(c) - 1.0 / c
        # orthonormal basis of the (c-1)-dim subspace the centred vertices span
        q, _ = np.linalg.qr(v.T)
        coords = v @ q[:, : c - 1]
        means = np.zeros((c, d))
        means[:, : c - 1] = coords * (separation / math.sqrt(2.0))
        return means
    side = math.ceil(c ** (1.0 / d))
    grid = np.array(list(itertools.islice(itertools.product(range(side), repeat=d), c)), dtype=np.float64)
    return (grid - grid.mean(axis=0)) * separation


def make_blobs(n_per_class, c, d, class_separation, seed, n_test_per_class=None, val_fraction=0.1, sigma=1.0):
    """Isotropic Gaussian classes in ``d`` dimensions.

    ``n_per_class`` samples per class form the training pool, of which
    ``val_fraction`` is moved to validation; ``n_test_per_class`` (default
    a third of ``n_per_class``) more per class form the test split.
    Samples are stored train, val, test in that order.
    """
    if c < 2 or d < 2:
        raise ConfigError("make_blobs needs c >= 2 and d >= 2")
    if n_test_per_class is None:
        n_test_per_class = max(1, n_per_class // 3)
    g = rngmod.stream(seed, "data")
    means = class_means(c, d, class_separation * sigma)

    def draw(m):
        y = np.repeat(np.arange(c), m)
        x = means[y] + sigma * g.normal(size=(len(y), d))
        return x, y

    x_pool, y_pool = draw(n_per_class)
    x_test, y_test = draw(n_test_per_class)
    order = g.permutation(len(y_pool))
    n_val = int(round(val_fraction * len(y_pool)))
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    features = np.concatenate([x_pool[train_idx], x_pool[val_idx], x_test])
    truth = np.concatenate([y_pool[train_idx], y_pool[val_idx], y_test])
    split = np.concatenate([np.full(len(train_idx), TRAIN), np.full(n_val, VAL), np.full(len(y_test), TEST)])
    return LabeledDataset(features, truth, truth.copy(), split, c)
