"""Run configuration: one JSON file with optional sections, strictly parsed.

Example::

    {
      "network": {"base_channels": 2, "blocks_per_scale": 1},
      "train":   {"epochs": 10, "batch_size": 8},
      "sim":     {"size": 64, "counts": 1e6, "n_records": 2000},
      "osem":    {"n_subsets": 8, "n_iterations": 10},
      "bench":   {"repetitions": 10, "dtype": "f32"}
    }

Every field is optional; missing fields take the dataclass defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .dataset import DEFAULT_MIX, validate_mix
from .errors import ConfigurationError
from .msfcnn import NetworkSpec
from .osem import OsemConfig
from .phantom import MIN_SIZE
from .training import TrainConfig

RAMP_WINDOWS = (None, "cosine")


def _strict(cls, d: dict, section: str):
    if not isinstance(d, dict):
        raise ConfigurationError(f"section {section!r} must be an object")
    unknown = set(d) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigurationError(f"unknown keys in {section!r}: {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigurationError(f"bad {section!r} section: {exc}") from exc


@dataclass(frozen=True)
class SimConfig:
    size: int = 64
    counts: float = 1e6
    n_records: int = 100
    mix: dict = field(default_factory=lambda: dict(DEFAULT_MIX))
    n_angles: int | None = None  # None: 3 * size / 2
    window: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.size < MIN_SIZE:
            raise ConfigurationError(f"size must be >= {MIN_SIZE}, got {self.size}")
        if not self.counts > 0:
            raise ConfigurationError("counts must be positive")
        if self.n_records < 1:
            raise ConfigurationError("n_records must be >= 1")
        if self.window not in RAMP_WINDOWS:
            raise ConfigurationError(f"window must be one of {RAMP_WINDOWS}")
        validate_mix(self.mix)


@dataclass(frozen=True)
class BenchConfig:
    repetitions: int = 10
    dtype: str = "f32"  # precision of the msfcnn forward pass
    methods: tuple = ("msfcnn", "osem", "fbp")

    def __post_init__(self):
        if self.repetitions < 1:
            raise ConfigurationError("repetitions must be >= 1")
        if self.dtype not in ("f32", "f64"):
            raise ConfigurationError("bench dtype must be 'f32' or 'f64'")
        object.__setattr__(self, "methods", tuple(self.methods))


SECTIONS = {"network": NetworkSpec, "train": TrainConfig, "sim": SimConfig,
            "osem": OsemConfig, "bench": BenchConfig}


@dataclass(frozen=True)
class RunConfig:
    network: NetworkSpec = NetworkSpec()
    train: TrainConfig = TrainConfig()
    sim: SimConfig = SimConfig()
    osem: OsemConfig = OsemConfig()
    bench: BenchConfig = BenchConfig()

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("configuration must be a JSON object")
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")
        return cls(**{name: _strict(SECTIONS[name], d[name], name) for name in d})

    def to_dict(self) -> dict:
        out = {name: asdict(getattr(self, name)) for name in SECTIONS}
        out["bench"]["methods"] = list(self.bench.methods)
        return out

    def override(self, section: str, **changes) -> "RunConfig":
        """Copy with non-None ``changes`` applied to one section."""
        changes = {k: v for k, v in changes.items() if v is not None}
        if not changes:
            return self
        try:
            part = replace(getattr(self, section), **changes)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc
        return replace(self, **{section: part})


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except ValueError as exc:
        raise ConfigurationError(f"{p}: invalid JSON ({exc})") from exc
    return RunConfig.from_dict(data)


def write_effective(cfg: RunConfig, directory, command: str, options: dict) -> Path:
    """Echo the effective configuration (plus command options) into ``directory``."""
    path = Path(directory) / "config.json"
    doc = {"command": command, "options": options, "config": cfg.to_dict()}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
