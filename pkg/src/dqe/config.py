"""Flat run configuration: defaults < key=value file < command-line flags."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .dataset import SimulationConfig
from .ising import LatticeConfig
from .laguerre import FeaturizerConfig
from .lindblad import EvolutionConfig
from .nn.model import Architecture
from .nn.train import TrainConfig
from .pulses import PulseRanges

ENV_VAR = "DQE_CONFIG"


class ConfigError(ValueError):
    """Unknown key or unparsable value; a usage error."""


@dataclass(frozen=True)
class RunConfig:
    # lattice
    n_sites: int = 8
    J: float = -2.4
    g: float = 1.0
    # evolution
    gamma: float = 0.01
    dt_integrate: float = 0.003
    samples_per_cycle: int = 256
    # featurizer
    T2: float = 100.0
    N: int = 10
    tau_max_factor: float = 35.0
    points_per_cycle: int = 64
    # pulse sampling ranges; mu is drawn in units of pi / omega
    amplitude_min: float = 1.0
    amplitude_max: float = 16.0
    omega_min: float = 0.1
    omega_max: float = 0.3
    mu_max: float = 6.0
    # generation
    num_pulses: int = 704
    workers: int = 1
    seed: int = 0
    # network and training
    width: int = 64
    n_blocks: int = 4
    epochs: int = 2000
    lr: float = 1.0
    drop_epoch: int = 1500
    drop_factor: float = 10.0
    batch: int = 4096
    test_fraction: float = 0.1
    # benchmark
    trials: int = 5
    # paths
    data: str = ""
    model: str = ""
    out_csv: str = ""

    def simulation(self) -> SimulationConfig:
        return SimulationConfig(
            lattice=LatticeConfig(n_sites=self.n_sites, J=self.J, g=self.g),
            evolution=EvolutionConfig(gamma=self.gamma, dt_integrate=self.dt_integrate,
                                      samples_per_cycle=self.samples_per_cycle),
            featurizer=FeaturizerConfig(T2=self.T2, N=self.N, tau_max_factor=self.tau_max_factor,
                                        points_per_cycle=self.points_per_cycle),
            ranges=PulseRanges(amplitude=(self.amplitude_min, self.amplitude_max),
                               omega=(self.omega_min, self.omega_max),
                               mu_pi_over_omega=(0.0, self.mu_max)),
        )

    def training(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, lr=self.lr, drop_epoch=self.drop_epoch,
                           drop_factor=self.drop_factor, batch_size=self.batch, seed=self.seed)

    def architecture(self) -> Architecture:
        return Architecture(n_features=self.N, width=self.width, n_blocks=self.n_blocks)

    def as_text(self) -> str:
        return "\n".join(f"{f.name} = {getattr(self, f.name)}" for f in fields(self))


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw) -> object:
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    try:
        if kind == "int":
            value = int(raw)
        elif kind == "float":
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError("not finite")
        else:
            value = str(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from None
    return value


def parse_text(text: str, source: str = "<text>") -> dict:
    """key = value lines; blank lines and '#' comments ignored."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        out[key] = _convert(key, raw)
    return out


def resolve(config_file: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file (explicit or $DQE_CONFIG), then non-None overrides."""
    path = config_file or os.environ.get(ENV_VAR) or None
    values = {}
    if path:
        try:
            values.update(parse_text(Path(path).read_text(), str(path)))
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    for key, raw in (overrides or {}).items():
        if raw is not None:
            values[key] = _convert(key, raw)
    return dataclasses.replace(RunConfig(), **values)


def parse_assignments(items) -> dict:
    """``--set key=value`` pairs."""
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = (s.strip() for s in item.split("=", 1))
        out[key] = _convert(key, raw)
    return out
