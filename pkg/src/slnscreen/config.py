"""Flat ``key = value`` run configuration shared by the CLI subcommands."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .corpus import PATCHES_PER_SLIDE
from .errors import ConfigError
from .nn import ModelConfig, default_layers
from .synthetic import SyntheticLayout
from .trainer import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    # model
    model_seed: int = 0
    conv_filters: tuple[int, ...] = (16, 32, 64, 128)
    kernel: int = 3
    dense_units: int = 256
    dropout: float = 0.5
    # training
    train_seed: int = 0
    batch_size: int = 32
    max_epochs: int = 50
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    patience: int = 5
    hflip: bool = True
    vflip: bool = True
    # corpus
    patches_per_slide: int = PATCHES_PER_SLIDE
    cases_per_category: tuple[int, ...] = (10, 6, 8, 10)
    policy: str = "slide"
    case_coherent: bool = True
    label_mode: str = "case"

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            layers=default_layers(self.conv_filters, self.kernel, self.dense_units, self.dropout),
            seed=self.model_seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.batch_size, self.max_epochs, self.optimizer, self.learning_rate,
                           self.patience, self.hflip, self.vflip, self.train_seed)

    def layout(self) -> SyntheticLayout:
        if len(self.cases_per_category) != 4:
            raise ConfigError("cases_per_category needs four counts (Negative, ITC, Micro, Macro)")
        return SyntheticLayout(tuple(self.cases_per_category), self.patches_per_slide,
                               policy=self.policy, case_coherent=self.case_coherent)

    def dump(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(map(str, v))
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_CHOICES = {"optimizer": ("adam", "sgd"), "policy": ("slide", "image"), "label_mode": ("case", "slide")}


def _convert(name: str, raw: str, default):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"expected true/false, got {raw!r}")
            return low in ("true", "1", "yes")
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        value = type(default)(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from None
    if name in _CHOICES and value not in _CHOICES[name]:
        raise ConfigError(f"{name} must be one of {', '.join(_CHOICES[name])}, got {value!r}")
    return value


def parse_config(text: str, base: RunConfig = RunConfig(), source: str = "<config>") -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}: line {lineno}: unknown key {key!r}")
        updates[key] = _convert(key, raw, getattr(base, key))
    return replace(base, **updates)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), source=str(path))


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    updates = {k: v for k, v in overrides.items() if v is not None}
    for name in _CHOICES:
        if name in updates and updates[name] not in _CHOICES[name]:
            raise ConfigError(f"{name} must be one of {', '.join(_CHOICES[name])}")
    return replace(cfg, **updates)
