"""Run configuration shared by every CLI subcommand.

A config file is a flat JSON object whose keys are ``RunConfig`` field
names.  Precedence: command-line flag > config file > field default.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from tetmotion.errors import InvalidArgument

THREADS_ENV = "TETMOTION_THREADS"


@dataclass
class RunConfig:
    # shared
    seed: int = 0
    threads: int = 0  # 0 = auto
    resolution: int = 16
    iters: int = None  # None: 300 for fit-shape, 150 for fit-motion
    samples: int = None  # None: 10000 for fit-shape, 5000 for fit-motion
    squared: bool = True
    optimizer: str = None  # None: sgd-momentum for fit-shape, adam for fit-motion
    lr: float = None  # None: 0.01 for sgd-momentum, 1e-3 for adam
    momentum: float = 0.99
    weight_decay: float = None  # None: 3e-5 for sgd-momentum, 0 for adam
    w_cd: float = 1.0
    w_sdf: float = 0.1
    w_vol: float = 1.0
    w_reg: float = 1e-2
    # generate
    base: str = "icosphere"
    motion: str = "translate"
    amp: float = 0.2
    frames: int = 25
    # observations / motion model
    mode: str = "full"
    k: int = 3
    placement: str = "central"
    offsets: list = field(default_factory=list)
    model: str = "gru"
    steps: int = None  # None: 3 for full observations, 2 otherwise
    latent_dim: int = 16
    hidden: int = 64
    reextract: bool = False
    # fit-shape initialisation
    init_radius: float = 0.3
    eval_seed: int = 1
    eval_samples: int = 10_000
    # paths
    target: str = None
    dataset: str = None
    results: str = None
    grid: str = None
    out: str = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise InvalidArgument(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.offsets = list(cfg.offsets)
        return cfg

    @classmethod
    def from_json(cls, text):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"config is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidArgument("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())

    def save(self, path):
        Path(path).write_text(self.to_json())

    def merged(self, overrides):
        """Copy with non-None ``overrides`` applied."""
        data = asdict(self)
        for key, value in overrides.items():
            if value is not None:
                if key not in data:
                    raise InvalidArgument(f"unknown config key {key!r}")
                data[key] = value
        return RunConfig.from_dict(data)

    def thread_count(self):
        if self.threads < 0:
            raise InvalidArgument("threads must be >= 0")
        return self.threads or os.cpu_count() or 1
