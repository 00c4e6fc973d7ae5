"""Pipeline configuration: nested dataclasses, JSON I/O and dotted overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from typing import Optional

MODES = (
    "direct_ce_unfiltered",  # (a)
    "soft_guidance_raw",  # (b)
    "direct_ce_filtered",  # (c)
    "soft_guidance_adapter",  # (d)
)
ABLATION_ROWS = {"a": MODES[0], "b": MODES[1], "c": MODES[2], "d": MODES[3]}


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    scenes: list = field(default_factory=list)  # scene manifest paths
    test_scenes: list = field(default_factory=list)
    bank: str = ""
    output_dir: str = "runs"


@dataclass
class GeometryConfig:
    tau: float = 0.05


@dataclass
class LabelingConfig:
    temperature: float = 0.01


@dataclass
class AdapterConfig:
    alpha: float = 0.5
    hidden: Optional[int] = None  # None -> embedding dimension
    lr: float = 0.003
    batch: int = 16
    decay: float = 0.7
    decay_every: int = 20
    epochs: int = 80


@dataclass
class DistillConfig:
    mode: str = "soft_guidance_adapter"
    lr: float = 0.0001
    batch: int = 8
    poly_power: float = 0.9
    iters: int = 300
    k: int = 16
    pre_widths: list = field(default_factory=lambda: [32, 32])
    post_widths: list = field(default_factory=lambda: [64])
    precision: str = "float32"  # training arithmetic; gradient checks always use float64


@dataclass
class PipelineConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    adapter: AdapterConfig = field(default_factory=AdapterConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    seed: int = 0
    workers: int = 1

    def validate(self) -> "PipelineConfig":
        if self.distill.mode not in MODES:
            raise ConfigError(f"unknown distill mode {self.distill.mode!r}; choose from {MODES}")
        if not 0.0 <= self.adapter.alpha <= 1.0:
            raise ConfigError("adapter.alpha must lie in [0, 1]")
        for name, value in [("adapter.lr", self.adapter.lr), ("distill.lr", self.distill.lr),
                            ("labeling.temperature", self.labeling.temperature)]:
            if not value > 0:
                raise ConfigError(f"{name} must be positive")
        for name, value in [("adapter.batch", self.adapter.batch), ("distill.batch", self.distill.batch),
                            ("adapter.epochs", self.adapter.epochs), ("distill.iters", self.distill.iters),
                            ("distill.k", self.distill.k), ("workers", self.workers)]:
            if value < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.distill.precision not in ("float32", "float64"):
            raise ConfigError("distill.precision must be float32 or float64")
        if self.geometry.tau < 0:
            raise ConfigError("geometry.tau must be non-negative")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Digest of every setting that can change results (output location and worker count excluded)."""
        d = self.to_dict()
        d["paths"].pop("output_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        cfg = cls()
        for key, value in data.items():
            _assign(cfg, key, value)
        return cfg.validate()


def _assign(obj, key: str, value) -> None:
    if not hasattr(obj, key):
        raise ConfigError(f"unknown config key {key!r}")
    current = getattr(obj, key)
    if dataclasses.is_dataclass(current):
        if not isinstance(value, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        for k, v in value.items():
            _assign(current, k, v)
        return
    setattr(obj, key, value)


def _coerce(text: str, current):
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ConfigError(f"expected a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, list):
        return json.loads(text) if text.startswith("[") else [s for s in text.split(",") if s]
    if current is None:
        try:
            return json.loads(text)
        except json.JSONDecodeError:
            return text
    return text


def apply_override(cfg: PipelineConfig, dotted: str, text: str) -> None:
    """Apply a flat ``section.key`` override given as a string."""
    parts = dotted.split(".")
    obj = cfg
    for p in parts[:-1]:
        if not hasattr(obj, p):
            raise ConfigError(f"unknown config section {p!r} in {dotted!r}")
        obj = getattr(obj, p)
    key = parts[-1]
    if not hasattr(obj, key) or dataclasses.is_dataclass(getattr(obj, key)):
        raise ConfigError(f"unknown config key {dotted!r}")
    try:
        setattr(obj, key, _coerce(text, getattr(obj, key)))
    except ValueError as exc:
        raise ConfigError(f"bad value for {dotted}: {exc}") from exc


def load_config(path: Optional[str], overrides=()) -> PipelineConfig:
    data = {}
    if path:
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = PipelineConfig.from_dict(data)
    for dotted, text in overrides:
        apply_override(cfg, dotted, text)
    return cfg.validate()


# Desk-scale schedule for the synthetic suite: the default schedule targets
# large real scenes and needs far more iterations than the ablation budget.
BENCHMARK_OVERRIDES = {
    "adapter": {"batch": 1},
    "distill": {"lr": 0.02, "iters": 150, "batch": 4},
}


def benchmark_config(seed: int = 0) -> PipelineConfig:
    cfg = PipelineConfig.from_dict(json.loads(json.dumps(BENCHMARK_OVERRIDES)))
    cfg.seed = seed
    return cfg
