"""Experiment configuration: INI text with fixed sections and strict keys.

A config file may name a built-in preset in ``[experiment] preset``; the
preset's values are applied first and the file's own keys override them.
Unknown sections or keys are rejected with a message naming them.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import get_type_hints

from ..errors import ConfigError


@dataclass(frozen=True)
class ExperimentSection:
    preset: str = ""
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"
    log_interval: int = 100
    timing: bool = False


@dataclass(frozen=True)
class DataSection:
    name: str = "two_moons"
    n: int = 2000
    noise: float = 0.0
    seed: int = 0
    radius_ratio: float = 0.5
    labels_per_class: int = 3
    validation_fraction: float = 0.1
    test_n: int = 1000
    path: str = ""


@dataclass(frozen=True)
class GanSection:
    hidden: int = 384
    layers: int = 6
    latent_dim: int = 2
    latent_dist: str = "gaussian"
    steps: int = 2000
    batch_size: int = 128
    lr: float = 1e-4
    decay: float = 0.9
    gamma_c: float = 1.0
    hvp_step: float = 1e-4
    checkpoint_every: int = 200
    seed: int = 0
    checkpoint: str = ""


@dataclass(frozen=True)
class ClassifierSection:
    hidden: int = 384
    layers: int = 6
    activation: str = "relu"


@dataclass(frozen=True)
class RegularizerSection:
    epsilon: float = 0.15
    eta: float = 0.01
    variant: str = "directional"
    max_resample: int = 5


@dataclass(frozen=True)
class DecoupledSection:
    gamma_m: float = 6.0
    epochs: int = 1000
    batch_size: int = 32
    latent_batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    ema_decay: float = 0.999


@dataclass(frozen=True)
class UnsupSection:
    gamma_L: float = 3.0
    gamma_K: float = 1.0
    gamma_h: float = 0.1
    entropy_mode: str = "marginal"
    steps: int = 1000
    batch_size: int = 128
    latent_batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    ema_decay: float = 0.999


@dataclass(frozen=True)
class SslSection:
    gamma_m: float = 1e-3
    gamma_a: float = 0.0
    steps: int = 1000
    batch_size: int = 25
    lr: float = 3e-4
    beta1: float = 0.5
    ema_decay: float = 0.999
    disc_hidden: int = 128
    disc_layers: int = 3
    gen_hidden: int = 128
    gen_layers: int = 2
    latent_dim: int = 100
    latent_dist: str = "uniform"
    activation: str = "leaky_relu"
    init_std: float = 0.05
    feature_layer: int = 0


@dataclass(frozen=True)
class SweepSection:
    parameter: str = "epsilon"
    values: tuple[float, ...] = ()
    task: str = "train-classifier"


@dataclass(frozen=True)
class PlotSection:
    kind: str = "decision_boundary"
    resolution: int = 200
    bounds: tuple[float, ...] = (-1.5, 2.5, -1.0, 1.5)
    checkpoint: str = ""
    network: str = "classifier"
    metrics: str = ""
    n_samples: int = 256


@dataclass(frozen=True)
class EvalSection:
    checkpoint: str = ""
    network: str = "classifier"


SECTIONS = {
    "experiment": ExperimentSection,
    "data": DataSection,
    "gan": GanSection,
    "classifier": ClassifierSection,
    "regularizer": RegularizerSection,
    "decoupled": DecoupledSection,
    "unsup": UnsupSection,
    "ssl": SslSection,
    "sweep": SweepSection,
    "plot": PlotSection,
    "eval": EvalSection,
}

CHOICES = {
    ("data", "name"): ("two_moons", "two_circles", "csv"),
    ("gan", "latent_dist"): ("gaussian", "uniform"),
    ("ssl", "latent_dist"): ("gaussian", "uniform"),
    ("classifier", "activation"): ("relu", "leaky_relu", "tanh"),
    ("ssl", "activation"): ("relu", "leaky_relu", "tanh"),
    ("regularizer", "variant"): ("directional", "squared_first_method"),
    ("unsup", "entropy_mode"): ("marginal", "conditional", "mutual_information"),
    ("sweep", "parameter"): ("epsilon", "eta", "gamma"),
    ("sweep", "task"): ("train-classifier", "train-ssl-gan", "train-unsup"),
    ("plot", "kind"): ("decision_boundary", "regularizer_magnitude", "direction_field",
                       "samples_overlay", "loss_curves"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    data: DataSection = field(default_factory=DataSection)
    gan: GanSection = field(default_factory=GanSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    regularizer: RegularizerSection = field(default_factory=RegularizerSection)
    decoupled: DecoupledSection = field(default_factory=DecoupledSection)
    unsup: UnsupSection = field(default_factory=UnsupSection)
    ssl: SslSection = field(default_factory=SslSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    plot: PlotSection = field(default_factory=PlotSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def with_values(self, section: str, **values) -> "ExperimentConfig":
        return replace(self, **{section: replace(getattr(self, section), **values)})


PRESETS = {
    "toy-2d": """\
[experiment]
preset = toy-2d
seeds = 0, 1, 2, 3

[data]
name = two_moons
n = 2000
noise = 0.0
labels_per_class = 3

[regularizer]
epsilon = 0.15
eta = 0.01

[gan]
steps = 4000

[decoupled]
gamma_m = 6.0
epochs = 1500
batch_size = 6
latent_batch_size = 64
lr = 3e-4
ema_decay = 0.9
""",
    "toy-2d-noisy": """\
[experiment]
preset = toy-2d-noisy
seeds = 0, 1, 2, 3

[data]
name = two_moons
n = 2000
noise = 0.1
labels_per_class = 3

[regularizer]
epsilon = 0.15
eta = 0.01

[gan]
steps = 4000

[decoupled]
gamma_m = 6.0
epochs = 1500
batch_size = 6
latent_batch_size = 64
lr = 3e-4
ema_decay = 0.9
""",
    "toy-unsup": """\
[experiment]
preset = toy-unsup
seeds = 0, 1, 2, 3

[data]
name = two_moons
n = 2000
noise = 0.0

[regularizer]
epsilon = 0.15
eta = 0.01

[gan]
steps = 4000

[unsup]
gamma_L = 3.0
gamma_K = 1.0
gamma_h = 0.1
entropy_mode = marginal
steps = 600
batch_size = 128
latent_batch_size = 64
ema_decay = 0.99
""",
    "sslgan-cifar-shape": """\
[experiment]
preset = sslgan-cifar-shape
seeds = 0

[data]
name = two_moons
n = 2000
noise = 0.1
labels_per_class = 10

[regularizer]
epsilon = 20.0
eta = 1.0

[ssl]
gamma_m = 0.001
gamma_a = 0.0
batch_size = 25
lr = 0.0003
beta1 = 0.5
init_std = 0.05
activation = leaky_relu
latent_dim = 100
latent_dist = uniform
""",
}


def _convert(section: str, key: str, kind, raw: str):
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is str:
            value = text
        elif kind == tuple[int, ...]:
            return tuple(int(p) for p in text.split(",") if p.strip())
        elif kind == tuple[float, ...]:
            return tuple(float(p) for p in text.split(",") if p.strip())
        else:  # pragma: no cover - schema bug
            raise TypeError(kind)
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from None
    allowed = CHOICES.get((section, key))
    if allowed is not None and value not in allowed:
        raise ConfigError(f"{section}.{key}: {value!r} is not one of {', '.join(allowed)}")
    return value


def _read(text: str, source: str) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, strict=True,
                                       default_section="__no_defaults__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None
    raw = {}
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"{source}: unknown section [{name}]")
        known = {f.name for f in fields(SECTIONS[name])}
        for key in parser[name]:
            if key not in known:
                raise ConfigError(f"{source}: unknown key '{key}' in section [{name}]")
        raw[name] = dict(parser[name])
    return raw


def _validate(cfg: ExperimentConfig) -> None:
    if not cfg.experiment.seeds:
        raise ConfigError("experiment.seeds must list at least one seed")
    if cfg.experiment.log_interval <= 0:
        raise ConfigError("experiment.log_interval must be positive")
    if not 16 <= cfg.plot.resolution <= 1024:
        raise ConfigError("plot.resolution must lie in [16, 1024]")
    if len(cfg.plot.bounds) != 4:
        raise ConfigError("plot.bounds needs four numbers: xmin, xmax, ymin, ymax")
    if cfg.data.name == "csv" and not cfg.data.path:
        raise ConfigError("data.path is required when data.name = csv")


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    raw = _read(text, source)
    preset = raw.get("experiment", {}).get("preset", "").strip()
    merged: dict[str, dict[str, str]] = {}
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"{source}: unknown preset {preset!r}; "
                              f"known: {', '.join(sorted(PRESETS))}")
        merged = _read(PRESETS[preset], f"<preset {preset}>")
    for name, values in raw.items():
        merged.setdefault(name, {}).update(values)
    sections = {}
    for name, cls in SECTIONS.items():
        hints = get_type_hints(cls)
        values = {k: _convert(name, k, hints[k], v) for k, v in merged.get(name, {}).items()}
        try:
            sections[name] = cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{source}: [{name}] {exc}") from None
    cfg = ExperimentConfig(**sections)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def preset_config(name: str) -> ExperimentConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}")
    return parse_config(PRESETS[name], f"<preset {name}>")


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Full INI text of ``cfg``; ``parse_config(dump_config(c)) == c``."""
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in dataclasses.fields(section):
            lines.append(f"{f.name} = {_format(getattr(section, f.name))}".rstrip())
        lines.append("")
    return "\n".join(lines)
