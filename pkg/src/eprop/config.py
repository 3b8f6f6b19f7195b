"""Run configuration: one TOML file with a section per component."""
from __future__ import annotations

import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace

from .errors import ConfigError
from .features import FeatureConfig
from .network import NetworkConfig
from .neuron import NeuronParams
from .trainer import RegConfig, TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DATA_ROOT_ENV = "EPROP_DATA_ROOT"


@dataclass(frozen=True)
class DataConfig:
    timit: str = ""
    cache: str = "cache"
    out_dir: str = "runs"
    # synthetic stand-in task
    n_classes: int = 4
    n_train: int = 512
    n_val: int = 128
    n_test: int = 128
    t_len: int = 20
    separation: float = 2.0


@dataclass(frozen=True)
class RunConfig:
    neuron: NeuronParams = field(default_factory=NeuronParams)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    reg: RegConfig = field(default_factory=RegConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    data: DataConfig = field(default_factory=DataConfig)
    clip: bool = True

    def to_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = _plain(asdict(value)) if hasattr(value, "__dataclass_fields__") else value
        return out


def _plain(d):
    return {k: (v.value if hasattr(v, "value") else v) for k, v in d.items()}


_SECTIONS = {
    "neuron": NeuronParams,
    "network": NetworkConfig,
    "train": TrainConfig,
    "reg": RegConfig,
    "features": FeatureConfig,
    "data": DataConfig,
}


def _build(cls, values, section):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


def from_dict(raw):
    """Build a :class:`RunConfig`, rejecting unknown sections and keys."""
    raw = dict(raw)
    clip = raw.pop("clip", True)
    if not isinstance(clip, bool):
        raise ConfigError("clip must be true or false")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    parts = {}
    for name, cls in _SECTIONS.items():
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"[{name}] must be a table")
        parts[name] = _build(cls, section, name)
    cfg = RunConfig(clip=clip, **parts)
    root = os.environ.get(DATA_ROOT_ENV)
    if root:
        cfg = replace(cfg, data=replace(cfg.data, timit=root))
    return cfg


def load_config(path=None):
    if path is None:
        return from_dict({})
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw)


def override(cfg, section, **values):
    """Copy of ``cfg`` with keys of one section replaced (``None`` values are ignored)."""
    values = {k: v for k, v in values.items() if v is not None}
    if not values:
        return cfg
    if section == "clip":
        return replace(cfg, clip=values["clip"])
    current = _plain(asdict(getattr(cfg, section)))
    current.update(values)
    return replace(cfg, **{section: _build(_SECTIONS[section], current, section)})
