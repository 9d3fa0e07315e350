"""Small reverse-mode differentiation core for desk-scale classifiers.

A network is an ordered list of layer descriptors ending in a softmax. Each
layer caches what its backward pass needs during ``forward``; ``backward``
walks the cache in reverse, accumulating parameter gradients and returning
the gradient with respect to the network input. Everything runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigError, NumericalError, UsageError

DTYPE = np.float64


@dataclass
class Tensor:
    values: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=DTYPE)
        if self.grad is not None and self.grad.shape != self.values.shape:
            raise ValueError("grad shape must match values shape")

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.values)


@dataclass
class ParamSet:
    """Named parameters with one momentum buffer each."""

    params: dict[str, Tensor] = field(default_factory=dict)
    momentum: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, values: np.ndarray):
        if name in self.params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self.params[name] = Tensor(values)
        self.momentum[name] = np.zeros_like(self.params[name].values)

    def __getitem__(self, name):
        return self.params[name]

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for t in self.params.values():
            t.zero_grad()

    def reset_momentum(self):
        for name in self.momentum:
            self.momentum[name] = np.zeros_like(self.params[name].values)

    def copy(self):
        out = ParamSet()
        for name, t in self.params.items():
            out.params[name] = Tensor(t.values.copy())
            out.momentum[name] = self.momentum[name].copy()
        return out


# ---------------------------------------------------------------- layers


@dataclass(frozen=True)
class Dense:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class Conv2d:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    pad: int = 0


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class GlobalAvgPool:
    pass


@dataclass(frozen=True)
class Softmax:
    classes: int


Layer = Union[Dense, Conv2d, ReLU, GlobalAvgPool, Softmax]


@dataclass(frozen=True)
class NetworkSpec:
    """Layer list plus the per-sample input shape, e.g. ``(2,)`` or ``(3, 8, 8)``."""

    layers: tuple
    input_shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        self.output_shapes()

    @property
    def classes(self) -> int:
        return self.layers[-1].classes

    @property
    def input_size(self) -> int:
        return int(np.prod(self.input_shape))

    def output_shapes(self):
        """Per-layer output shapes; raises ConfigError on the first incompatible layer."""
        if not self.layers or not isinstance(self.layers[-1], Softmax):
            raise ConfigError("final layer must be Softmax")
        shape = self.input_shape
        shapes = []
        for i, layer in enumerate(self.layers):
            where = f"layer {i} ({type(layer).__name__})"
            if isinstance(layer, Dense):
                if shape != (layer.in_features,):
                    raise ConfigError(f"{where}: expects ({layer.in_features},), got {shape}")
                shape = (layer.out_features,)
            elif isinstance(layer, Conv2d):
                if len(shape) != 3 or shape[0] != layer.in_channels:
                    raise ConfigError(f"{where}: expects ({layer.in_channels}, H, W), got {shape}")
                h = (shape[1] + 2 * layer.pad - layer.kernel) // layer.stride + 1
                w = (shape[2] + 2 * layer.pad - layer.kernel) // layer.stride + 1
                if h < 1 or w < 1:
                    raise ConfigError(f"{where}: kernel larger than padded input {shape}")
                shape = (layer.out_channels, h, w)
            elif isinstance(layer, GlobalAvgPool):
                if len(shape) != 3:
                    raise ConfigError(f"{where}: expects (C, H, W), got {shape}")
                shape = (shape[0],)
            elif isinstance(layer, Softmax):
                if shape != (layer.classes,):
                    raise ConfigError(f"{where}: expects ({layer.classes},), got {shape}")
                if i != len(self.layers) - 1:
                    raise ConfigError(f"{where}: softmax must be the last layer")
            elif isinstance(layer, ReLU):
                pass
            else:
                raise ConfigError(f"{where}: unknown layer type")
            shapes.append(shape)
        return shapes


def mlp_spec(sizes: Sequence[int]) -> NetworkSpec:
    """``mlp_spec([2, 32, 32, 3])`` -> dense/relu stack with a 3-way softmax."""
    layers = []
    for i in range(len(sizes) - 1):
        layers.append(Dense(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(ReLU())
    layers.append(Softmax(sizes[-1]))
    return NetworkSpec(layers, (sizes[0],))


def init_params(spec: NetworkSpec, rng: np.random.Generator) -> ParamSet:
    """He fan-in initialisation for weights, zero biases."""
    params = ParamSet()
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            std = np.sqrt(2.0 / layer.in_features)
            params.add(f"{i}.weight", rng.normal(0.0, std, (layer.in_features, layer.out_features)))
            params.add(f"{i}.bias", np.zeros(layer.out_features))
        elif isinstance(layer, Conv2d):
            fan_in = layer.in_channels * layer.kernel**2
            shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
            params.add(f"{i}.weight", rng.normal(0.0, np.sqrt(2.0 / fan_in), shape))
            params.add(f"{i}.bias", np.zeros(layer.out_channels))
    return params


def check_params(spec: NetworkSpec, params: ParamSet):
    expected = {}
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            expected[f"{i}.weight"] = (layer.in_features, layer.out_features)
            expected[f"{i}.bias"] = (layer.out_features,)
        elif isinstance(layer, Conv2d):
            expected[f"{i}.weight"] = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
            expected[f"{i}.bias"] = (layer.out_channels,)
    if set(expected) != set(params.params):
        raise ConfigError(f"parameter names {sorted(params.params)} do not match spec {sorted(expected)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ConfigError(f"parameter {name}: shape {params[name].shape}, spec wants {shape}")


# ------------------------------------------------------- layer kernels


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs, upstream):
    inner = (upstream * probs).sum(axis=1, keepdims=True)
    return probs * (upstream - inner)


def _conv_forward(x, w, b, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    n, _, hp, wp = x.shape
    o, _, k, _ = w.shape
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    out = np.broadcast_to(b[None, :, None, None], (n, o, ho, wo)).copy()
    for di in range(k):
        for dj in range(k):
            patch = x[:, :, di : di + stride * ho : stride, dj : dj + stride * wo : stride]
            out += np.einsum("nchw,oc->nohw", patch, w[:, :, di, dj])
    return out, x


def _conv_backward(upstream, xpad, w, stride, pad):
    k = w.shape[2]
    _, _, ho, wo = upstream.shape
    dx = np.zeros_like(xpad)
    dw = np.zeros_like(w)
    for di in range(k):
        for dj in range(k):
            sl = (slice(None), slice(None), slice(di, di + stride * ho, stride), slice(dj, dj + stride * wo, stride))
            dw[:, :, di, dj] = np.einsum("nohw,nchw->oc", upstream, xpad[sl])
            dx[sl] += np.einsum("nohw,oc->nchw", upstream, w[:, :, di, dj])
    db = upstream.sum(axis=(0, 2, 3))
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dx, dw, db


def _run_layers(spec, params, x, cache):
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Dense):
            if cache is not None:
                cache.append(x)
            x = x @ params[f"{i}.weight"].values + params[f"{i}.bias"].values
        elif isinstance(layer, Conv2d):
            x, xpad = _conv_forward(x, params[f"{i}.weight"].values, params[f"{i}.bias"].values, layer.stride, layer.pad)
            if cache is not None:
                cache.append(xpad)
        elif isinstance(layer, ReLU):
            if cache is not None:
                cache.append(x > 0)
            x = np.maximum(x, 0.0)
        elif isinstance(layer, GlobalAvgPool):
            if cache is not None:
                cache.append(x.shape)
            x = x.mean(axis=(2, 3))
        elif isinstance(layer, Softmax):
            x = softmax(x)
            if cache is not None:
                cache.append(x)
    return x


def _as_batch(spec, batch):
    x = batch.values if isinstance(batch, Tensor) else np.asarray(batch, dtype=DTYPE)
    if x.ndim == 2 and len(spec.input_shape) > 1 and x.shape[1] == spec.input_size:
        x = x.reshape((x.shape[0],) + spec.input_shape)
    if x.shape[1:] != spec.input_shape:
        raise ConfigError(f"layer 0 ({type(spec.layers[0]).__name__}): batch shape {x.shape[1:]} does not match input {spec.input_shape}")
    return x


class Network:
    """A spec bound to parameters, holding the cache of the last forward pass."""

    def __init__(self, spec: NetworkSpec, params: ParamSet):
        check_params(spec, params)
        self.spec = spec
        self.params = params
        self._cache = None
        self._input_shape = None

    def forward(self, batch) -> np.ndarray:
        x = _as_batch(self.spec, batch)
        self._input_shape = np.shape(batch.values if isinstance(batch, Tensor) else batch)
        self._cache = []
        return _run_layers(self.spec, self.params, x, self._cache)

    def predict(self, batch, chunk: int = 4096) -> np.ndarray:
        """Forward without caching, in chunks."""
        x = _as_batch(self.spec, batch)
        if len(x) <= chunk:
            return _run_layers(self.spec, self.params, x, None)
        return np.concatenate([_run_layers(self.spec, self.params, x[s : s + chunk], None) for s in range(0, len(x), chunk)])

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        """Accumulate dL/dparam into ``.grad`` given dL/dprobs; returns dL/dinput."""
        if self._cache is None:
            raise UsageError("backward called without a matching forward pass")
        cache, self._cache = self._cache, None
        g = np.asarray(upstream, dtype=DTYPE)
        if g.shape != cache[-1].shape:
            raise ConfigError(f"upstream gradient shape {g.shape} != output shape {cache[-1].shape}")
        for name, t in self.params.items():
            if t.grad is None:
                t.zero_grad()
        for i in range(len(self.spec.layers) - 1, -1, -1):
            layer = self.spec.layers[i]
            saved = cache[i]
            if isinstance(layer, Softmax):
                g = softmax_backward(saved, g)
            elif isinstance(layer, ReLU):
                g = g * saved
            elif isinstance(layer, GlobalAvgPool):
                n, c, h, w = saved
                g = np.broadcast_to(g[:, :, None, None] / (h * w), saved).copy()
            elif isinstance(layer, Dense):
                wt = self.params[f"{i}.weight"]
                wt.grad += saved.T @ g
                self.params[f"{i}.bias"].grad += g.sum(axis=0)
                g = g @ wt.values.T
            elif isinstance(layer, Conv2d):
                wt = self.params[f"{i}.weight"]
                g, dw, db = _conv_backward(g, saved, wt.values, layer.stride, layer.pad)
                wt.grad += dw
                self.params[f"{i}.bias"].grad += db
        for name, t in self.params.items():
            if not np.all(np.isfinite(t.grad)):
                raise NumericalError(f"non-finite gradient in parameter {name}")
        return g.reshape(self._input_shape)


def forward(spec: NetworkSpec, params: ParamSet, batch) -> np.ndarray:
    return Network(spec, params).predict(batch)


# ------------------------------------------------------ gradient check

LossFn = Callable[[np.ndarray], tuple]


def gradient_check(spec: NetworkSpec, params: ParamSet, loss_fn: LossFn, batch, eps: float = 1e-5,
                   max_components: int | None = None, rng: np.random.Generator | None = None,
                   check_input: bool = False) -> float:
    """Max relative error between backprop and central differences.

    ``loss_fn(probs)`` must return ``(value, dvalue/dprobs)``. Each checked
    component is perturbed by +-eps; with ``max_components`` a random subset
    per parameter is checked instead of every entry.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ConfigError("eps must lie in [1e-6, 1e-3]")
    net = Network(spec, params)
    x = _as_batch(spec, batch).copy()
    params.zero_grad()
    probs = net.forward(x)
    _, dprobs = loss_fn(probs)
    dx = net.backward(dprobs)

    def loss_at(location):
        value = loss_fn(net.predict(x))[0]
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss while perturbing {location}")
        return value

    targets = [(name, t.values, t.grad) for name, t in params.items()]
    if check_input:
        targets.append(("input", x, dx.reshape(x.shape)))
    worst = 0.0
    for name, values, analytic in targets:
        flat = values.reshape(-1)
        idx = np.arange(flat.size)
        if max_components is not None and flat.size > max_components:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_components, replace=False)
        an = analytic.reshape(-1)
        for j in idx:
            orig = flat[j]
            flat[j] = orig + eps
            up = loss_at(f"{name}[{j}]")
            flat[j] = orig - eps
            down = loss_at(f"{name}[{j}]")
            flat[j] = orig
            num = (up - down) / (2 * eps)
            err = abs(an[j] - num) / max(abs(an[j]), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
