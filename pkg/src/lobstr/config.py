"""INI-style key-value configuration; ``LOBSTR_CONFIG`` names the file when no path is given."""

from __future__ import annotations

import configparser
import os
from dataclasses import fields
from pathlib import Path

from .net import NetConfig
from .postprocess import IkConfig
from .train import TrainConfig

ENV_VAR = "LOBSTR_CONFIG"
SECTIONS = ("data", "net", "train", "ik", "runtime")

DEFAULT_TEXT = """\
[data]
seed = 0
sigma = 0.01
max_angle_deg = 1.5

[net]
hidden = 1024
latent = 128

[train]
epochs = 1500
batch_size = 256
batches_per_epoch = 1
lr = 1e-3
decay = 0.999
seed = 0
checkpoint_every = 50
angular_mode = relative

[ik]
max_iterations = 50
tolerance = 1e-3
damping = 0.1
blend_frames = 10
contact_threshold = 0.5
hysteresis = 0.0
snap_to_floor = false
enabled = true

[runtime]
host = 127.0.0.1
port = 7745
"""


class ConfigError(ValueError):
    pass


def config_path(path=None):
    if path:
        return Path(path)
    env = os.environ.get(ENV_VAR)
    return Path(env) if env else None


def load_config(path=None) -> dict:
    """Returns ``{section: {key: str}}``; unknown sections are rejected."""
    cp = configparser.ConfigParser()
    p = config_path(path)
    if p is not None:
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        try:
            cp.read_string(text, source=str(p))
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
    unknown = [s for s in cp.sections() if s not in SECTIONS]
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(unknown)}")
    return {s: dict(cp[s]) if cp.has_section(s) else {} for s in SECTIONS}


def _typed(cls, values: dict, skip=()):
    kw = {}
    defaults = cls()
    names = {f.name for f in fields(cls)}
    for k, v in values.items():
        if k not in names or k in skip:
            raise ConfigError(f"unknown option {k!r} for {cls.__name__}")
        d = getattr(defaults, k)
        if isinstance(d, bool):
            kw[k] = str(v).strip().lower() in ("1", "true", "yes", "on")
        else:
            try:
                kw[k] = type(d)(v)
            except ValueError as exc:
                raise ConfigError(f"option {k!r}: {exc}") from exc
    try:
        return cls(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def net_config(cfg: dict) -> NetConfig:
    return _typed(NetConfig, cfg.get("net", {}))


def ik_config(cfg: dict) -> IkConfig:
    return _typed(IkConfig, cfg.get("ik", {}))


def train_config(cfg: dict, **overrides) -> TrainConfig:
    m = dict(cfg.get("train", {}))
    m.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TrainConfig.from_mapping(m)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
