"""Run configuration: dataclasses, named presets and structured-text loading."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .prior import PriorTrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_train: int = 200
    n_val: int = 20
    n_test: int = 20
    length: int = 200
    fps: float = 50.0


@dataclass
class TrainConfig:
    K: int = 10
    lambda_nf: float = 0.01
    lambda_a: float = 100.0
    lambda_d: tuple = (8.0, 25.0)
    lambda_r: float = 2.0
    lambda_mm: float = 1.0
    lambda_past: float = 100.0
    lambda_limb: float = 500.0
    alpha: tuple = (100.0, 300.0)
    batch_size: int = 16
    epochs: int = 500
    samples_per_epoch: int = 5000
    lr: float = 1e-3
    lr_decay_start: int = 100
    lr_decay_span: int = 400
    seed: int = 0
    H: int = 25
    T: int = 100
    M: int = 20
    pgt_threshold: float = 0.5
    stride: int | None = None
    hidden: int = 256
    latent_dim: int = 64
    n_blocks: int = 4
    parts: str = "lower-upper"
    checkpoint_every: int = 50
    val_windows: int = 32
    val_samples: int = 10
    divergence_limit: float = 1e6
    max_pseudo_gt: int | None = None

    def __post_init__(self):
        self.lambda_d = tuple(float(x) for x in self.lambda_d)
        self.alpha = tuple(float(x) for x in self.alpha)
        weights = [self.lambda_nf, self.lambda_a, self.lambda_r, self.lambda_mm,
                   self.lambda_past, self.lambda_limb, *self.lambda_d]
        if any(w < 0 for w in weights):
            raise ConfigError("loss weights must be >= 0")
        if any(w > 0 for w in self.lambda_d) and self.K < 2:
            raise ConfigError("K >= 2 is required when a diversity weight is positive")
        if any(a <= 0 for a in self.alpha):
            raise ConfigError("diversity normalizers must be > 0")
        if len(self.alpha) != len(self.lambda_d):
            raise ConfigError("lambda_d and alpha need one entry per body part")
        if self.lr_decay_span <= 0:
            raise ConfigError("lr_decay_span must be positive")
        if not 1 <= self.M <= self.H + self.T:
            raise ConfigError(f"need 1 <= M <= H+T, got M={self.M}")

    @property
    def window_stride(self) -> int:
        return self.stride or max(1, self.T // 2)

    def lr_factor(self, epoch: int) -> float:
        """Multiplicative decay: 1 until ``lr_decay_start``, then linear over ``lr_decay_span``."""
        return max(0.0, 1.0 - max(0, epoch - self.lr_decay_start) / self.lr_decay_span)


@dataclass
class EvalConfig:
    n_samples: int = 50
    max_windows: int | None = None
    stride: int | None = None


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    prior: PriorTrainConfig = field(default_factory=PriorTrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    angle_margin: float = 0.0
    preset: str = ""

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


PRESETS = {
    "h36m-paper": {
        "train": dict(K=10, lambda_nf=0.01, lambda_a=100.0, lambda_d=(8.0, 25.0), lambda_r=2.0,
                      lambda_mm=1.0, alpha=(100.0, 300.0), lambda_past=100.0, lambda_limb=500.0,
                      batch_size=16, epochs=500, samples_per_epoch=5000, H=25, T=100, M=20),
    },
    "humaneva-paper": {
        "train": dict(K=10, lambda_nf=0.01, lambda_a=100.0, lambda_d=(5.0, 10.0), lambda_r=2.0,
                      lambda_mm=1.0, alpha=(15.0, 50.0), lambda_past=100.0, lambda_limb=500.0,
                      batch_size=16, epochs=500, samples_per_epoch=2000, H=15, T=60, M=8),
    },
    "desk-synth": {
        "prior": dict(epochs=15, batch_size=512, lr=2e-3, max_samples=12000),
        "train": dict(K=5, lambda_nf=0.01, lambda_a=100.0, lambda_d=(8.0, 25.0), lambda_r=2.0,
                      lambda_mm=1.0, alpha=(40.0, 80.0), lambda_past=100.0, lambda_limb=500.0,
                      batch_size=8, epochs=25, samples_per_epoch=128, H=15, T=60, M=8,
                      lr=3e-3, lr_decay_start=6, lr_decay_span=30, hidden=64,
                      checkpoint_every=10, val_windows=16, val_samples=10,
                      pgt_threshold=0.1, max_pseudo_gt=16),
        "eval": dict(n_samples=50, max_windows=40),
    },
}


def _merge(cfg: RunConfig, overrides: dict) -> RunConfig:
    sections = {"synth": SynthConfig, "prior": PriorTrainConfig, "train": TrainConfig, "eval": EvalConfig}
    kwargs = {}
    for name, cls in sections.items():
        current = dataclasses.asdict(getattr(cfg, name))
        extra = overrides.get(name) or {}
        unknown = set(extra) - set(current)
        if unknown:
            raise ConfigError(f"unknown {name} keys: {sorted(unknown)}")
        current.update(extra)
        try:
            kwargs[name] = cls(**current)
        except TypeError as e:
            raise ConfigError(str(e)) from None
    unknown = set(overrides) - set(sections) - {"angle_margin", "preset"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return RunConfig(**kwargs, angle_margin=float(overrides.get("angle_margin", cfg.angle_margin)),
                     preset=overrides.get("preset", cfg.preset))


def preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return _merge(RunConfig(), {**PRESETS[name], "preset": name})


def load_config(source: str | Path | None) -> RunConfig:
    """Load a YAML/JSON run config or a preset name; a file may name a ``preset`` to extend."""
    if source is None:
        return preset("desk-synth")
    if str(source) in PRESETS:
        return preset(str(source))
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"config {source!r} is neither a file nor a preset ({sorted(PRESETS)})")
    doc = yaml.safe_load(path.read_text()) or {}
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a mapping")
    base = preset(doc["preset"]) if doc.get("preset") else RunConfig()
    return _merge(base, doc)


def dump_config(cfg: RunConfig, path) -> None:
    def plain(x):
        if isinstance(x, dict):
            return {k: plain(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [plain(v) for v in x]
        return x
    Path(path).write_text(yaml.safe_dump(plain(cfg.to_dict()), sort_keys=False))
