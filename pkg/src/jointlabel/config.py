"""Experiment configuration as flat ``section.key = value`` text.

Example::

    seed = 0
    out = runs/sn40
    data.source = blobs
    noise.kind = symmetric
    noise.rate = 0.4
    joint.alpha = 1.2
    step1.lr = 0:0.1
    step2.lr = 0:0.1, 50:0.01, 75:0.001

Learning rates are ``epoch:lr`` points of a piecewise-constant schedule.
``joint.t1 = auto`` starts label updates at 15% of ``joint.epochs``.
"""

import dataclasses
import math
from dataclasses import dataclass, field

from . import fileio
from .autodiff import Conv2d, Dense, GlobalAvgPool, NetworkSpec, ReLU, Softmax, mlp_spec
from .errors import ConfigError, ContractError
from .labels import ALL
from .noise import NoiseSpec, resolve_pairs
from .trainer import JointRunConfig, OptimizerConfig


@dataclass
class DataSection:
    source: str = "blobs"  # "blobs" or a dataset file path
    n_per_class: int = 300
    n_test_per_class: int = 100
    classes: int = 3
    dim: int = 2
    separation: float = 4.0
    shape: str = ""  # per-sample shape "C,H,W" for image-like file data


@dataclass
class NoiseSection:
    kind: str = "symmetric"  # symmetric | asymmetric | none (keep file labels)
    rate: float = 0.4
    pairs: str = ""  # preset name (cifar10-asym) or "src:dst, src:dst"


@dataclass
class NetworkSection:
    preset: str = "mlp"  # mlp | tiny-cnn
    hidden: str = "32,32"


@dataclass
class JointSection:
    alpha: float = 1.2
    beta: float = 0.8
    t1: str = "auto"
    t2: str = "inf"
    topk: str = ALL
    window: str = "10"
    mode: str = "soft"
    epochs: int = 200


@dataclass
class OptSection:
    lr: str = "0:0.1"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 128
    epochs: int = 100


def _step2_default():
    return OptSection(lr="0:0.1, 50:0.01, 75:0.001")


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: str = "runs/default"
    data: DataSection = field(default_factory=DataSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    joint: JointSection = field(default_factory=JointSection)
    step1: OptSection = field(default_factory=OptSection)
    step2: OptSection = field(default_factory=_step2_default)

    # -------------------------------------------------------- text form

    def items(self):
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                for sub in dataclasses.fields(value):
                    yield f"{f.name}.{sub.name}", getattr(value, sub.name)
            else:
                yield f.name, value

    def to_text(self) -> str:
        return fileio.format_kv(self.items())

    @classmethod
    def from_text(cls, text: str, base=None):
        try:
            pairs = fileio.parse_kv(text)
        except ContractError as e:
            raise ConfigError(str(e)) from None
        return (base or cls()).updated(pairs)

    @classmethod
    def load(cls, path, base=None):
        return cls.from_text(fileio._read(path).decode(), base)

    def updated(self, pairs: dict):
        """Copy with dotted-key overrides applied; values may be strings."""
        cfg = dataclasses.replace(self, **{f.name: dataclasses.replace(getattr(self, f.name))
                                          for f in dataclasses.fields(self)
                                          if dataclasses.is_dataclass(getattr(self, f.name))})
        for key, raw in pairs.items():
            target, name = cfg, key
            if "." in key:
                section, name = key.split(".", 1)
                target = getattr(cfg, section, None)
                if not dataclasses.is_dataclass(target):
                    raise ConfigError(f"unknown config section in {key!r}")
            kinds = {f.name: f.type for f in dataclasses.fields(target)}
            if name not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(target, name, _coerce(key, raw, kinds[name]))
        return cfg

    # -------------------------------------------------------- builders

    def noise_spec(self) -> NoiseSpec | None:
        if self.noise.kind == "none":
            return None
        pairs = self.noise.pairs.strip()
        if pairs and ":" in pairs:
            pair_map = tuple(tuple(int(v) for v in p.split(":")) for p in pairs.split(","))
        else:
            pair_map = resolve_pairs(pairs) if pairs else ()
        return NoiseSpec(self.noise.kind, self.noise.rate, pair_map, self.seed)

    def joint_config(self) -> JointRunConfig:
        j = self.joint
        t1 = None if j.t1 == "auto" else _int(j.t1, "joint.t1")
        t2 = math.inf if j.t2 == "inf" else _int(j.t2, "joint.t2")
        topk = ALL if j.topk == ALL else _int(j.topk, "joint.topk")
        window = ALL if j.window == ALL else _int(j.window, "joint.window")
        return JointRunConfig(j.alpha, j.beta, t1, t2, topk, window, j.mode, j.epochs, self.seed)

    def optimizer(self, step: str) -> OptimizerConfig:
        s = getattr(self, step)
        return OptimizerConfig(parse_schedule(s.lr), s.momentum, s.weight_decay, s.batch_size)

    def network_spec(self, input_shape, classes) -> NetworkSpec:
        return build_network(self.network.preset, self.network.hidden, input_shape, classes)


def _int(raw, key):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}") from None


def _coerce(key, raw, kind):
    if not isinstance(raw, str):
        return raw
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None
    return raw


def parse_schedule(text):
    """``"0:0.2, 40:0.02"`` -> ((0, 0.2), (40, 0.02)); a bare number is a constant rate."""
    text = str(text).strip()
    try:
        if ":" not in text:
            return ((0, float(text)),)
        points = []
        for part in text.split(","):
            e, lr = part.split(":")
            points.append((int(e), float(lr)))
        return tuple(points)
    except ValueError:
        raise ConfigError(f"cannot parse learning-rate schedule {text!r}") from None


def format_schedule(points):
    return ", ".join(f"{e}:{lr!r}" for e, lr in points)


def build_network(preset, hidden, input_shape, classes) -> NetworkSpec:
    input_shape = tuple(input_shape)
    if preset == "mlp":
        if len(input_shape) != 1:
            raise ConfigError(f"mlp preset needs flat inputs, got shape {input_shape}")
        sizes = [int(h) for h in str(hidden).split(",") if h.strip()]
        return mlp_spec([input_shape[0], *sizes, classes])
    if preset == "tiny-cnn":
        if len(input_shape) != 3:
            raise ConfigError(f"tiny-cnn preset needs (C, H, W) inputs, got shape {input_shape}")
        ch = input_shape[0]
        return NetworkSpec([Conv2d(ch, 8, 3, 1, 1), ReLU(), Conv2d(8, 16, 3, 2, 1), ReLU(), GlobalAvgPool(),
                            Dense(16, classes), Softmax(classes)], input_shape)
    raise ConfigError(f"unknown network preset {preset!r}")


# named starting points for --preset; values are dotted-key overrides
PRESETS = {
    "blobs-sn40": {},
    "blobs-clean": {"noise.rate": "0.0"},
    "blobs-sn70": {"noise.rate": "0.7"},
    "blobs-sn70-hard": {"noise.rate": "0.7", "joint.mode": "hard"},
    "blobs10-asym40": {
        "data.classes": "10", "data.dim": "9", "data.n_per_class": "100", "data.n_test_per_class": "40",
        "noise.kind": "asymmetric", "noise.rate": "0.4", "noise.pairs": "cifar10-asym",
        "network.hidden": "64,64", "joint.alpha": "0.8", "joint.beta": "0.4",
    },
    # 10-d blobs a 64x64 MLP can memorise; high-lr probe setting in step1
    "probe-blobs": {
        "data.dim": "10", "data.separation": "6.0", "network.hidden": "64,64",
        "step1.lr": "0:0.2", "step1.weight_decay": "0.001", "step1.batch_size": "128",
    },
    # CIFAR-scale schedule with the SN r=0.7 hyperparameters; needs data.source pointing at a file
    "paper-sn70": {
        "noise.rate": "0.7", "joint.alpha": "1.2", "joint.beta": "0.8", "joint.t1": "70", "joint.epochs": "200",
        "step1.lr": "0:0.08", "step1.momentum": "0.9", "step1.weight_decay": "0.0001", "step1.batch_size": "128",
        "step2.lr": "0:0.2, 40:0.02, 80:0.002", "step2.epochs": "120",
    },
}


def preset(name) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    return ExperimentConfig().updated(PRESETS[name])
