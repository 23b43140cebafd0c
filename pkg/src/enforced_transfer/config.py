"""Experiment configuration and the flat ``dotted.key = value`` config file format.

Example::

    data.kind = blobs
    data.translation = 8
    cell.adversarial.epochs = 30
    lambda_grid = 1.5, 2.0, 3.0
    seeds = 0, 1, 2
"""
from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .cell import CellConfig
from .data import DEFAULT_FRACTIONS
from .nn import TrainConfig


@dataclass
class DataConfig:
    kind: str = "blobs"  # blobs | digits | files
    class_count: int = 4
    per_class: int = 1250
    dim: int = 8
    separation: float = 4.0
    rotation_deg: float = 0.0
    translation: float = 8.0
    noise_sigma: float = 0.0
    source_path: str = ""
    target_path: str = ""
    source_labels_path: str = ""  # IDX label files; CSV carries labels inline
    target_labels_path: str = ""
    header: bool = False
    fractions: tuple = DEFAULT_FRACTIONS

    def __post_init__(self):
        if self.kind not in ("blobs", "digits", "files"):
            raise ValueError(f"unknown data kind {self.kind!r}")
        self.fractions = tuple(self.fractions)


def _default_cell() -> CellConfig:
    return CellConfig(
        adversarial=TrainConfig(learning_rate=1e-3, epochs=30, batch_size=64, beta1=0.5),
        generator_lr=1e-4,
        disc_warmup_steps=100,
    )


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    backbone_hidden: tuple = (64, 64, 64)
    backbone: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=10))
    cell: CellConfig = field(default_factory=_default_cell)
    layers: tuple = ()  # empty: every injectable layer
    layer: int = 0  # single layer for train/ablate; 0 = deepest
    lambda_grid: tuple = (2.0,)
    lambda_t_grid: tuple = ()  # empty: lambda_t follows lambda_grid
    ridge: float = 1e-6
    contamination: float = 0.5
    mixed_size: int = 1000  # test mixed set; 0 = largest the held-out pools allow
    val_mixed_size: int = 0  # 0 = largest the held-out pools allow
    seeds: tuple = (0,)
    out: str = "runs/default"
    workers: int = 1

    def __post_init__(self):
        self.backbone_hidden = tuple(self.backbone_hidden)
        self.layers = tuple(self.layers)
        self.lambda_grid = tuple(float(v) for v in self.lambda_grid)
        self.lambda_t_grid = tuple(float(v) for v in self.lambda_t_grid)
        self.seeds = tuple(int(s) for s in self.seeds)
        self.validate()

    def validate(self):
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not self.lambda_grid:
            raise ValueError("lambda grid must not be empty")
        if any(v <= 0 for v in self.lambda_grid + self.lambda_t_grid):
            raise ValueError("lambdas must be positive")
        if not 0.0 <= self.contamination <= 1.0:
            raise ValueError("contamination must lie in [0, 1]")


def _parse_scalar(text: str):
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null"):
        return None
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _coerce(raw: str, current, key: str):
    raw = raw.strip()
    if isinstance(current, bool):
        value = _parse_scalar(raw)
        if not isinstance(value, bool):
            raise ValueError(f"{key}: expected true/false, got {raw!r}")
        return value
    if isinstance(current, tuple):
        if not raw:
            return ()
        return tuple(_parse_scalar(p.strip()) for p in raw.strip("()[]").split(",") if p.strip())
    if isinstance(current, int):
        try:
            return int(raw)
        except ValueError:
            raise ValueError(f"{key}: expected an integer, got {raw!r}") from None
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError:
            raise ValueError(f"{key}: expected a number, got {raw!r}") from None
    if isinstance(current, str):
        return raw
    value = _parse_scalar(raw)
    return float(value) if isinstance(value, int) and not isinstance(value, bool) else value


def apply_overrides(cfg, items: dict):
    """Set dotted keys on a nested dataclass config in place; returns ``cfg``."""
    for key, raw in items.items():
        parts = key.split(".")
        obj = cfg
        for p in parts[:-1]:
            if not dataclasses.is_dataclass(obj) or not hasattr(obj, p):
                raise KeyError(f"unknown config section {key!r}")
            obj = getattr(obj, p)
        leaf = parts[-1]
        fields = {f.name: f for f in dataclasses.fields(obj)} if dataclasses.is_dataclass(obj) else {}
        if leaf not in fields:
            raise KeyError(f"unknown config key {key!r}")
        current = getattr(obj, leaf)
        if dataclasses.is_dataclass(current):
            raise KeyError(f"{key!r} is a section, not a value")
        if isinstance(raw, str) and raw.strip().lower() in ("none", "null") and "None" in str(fields[leaf].type):
            value = None
        else:
            value = _coerce(raw, current, key) if isinstance(raw, str) else raw
        setattr(obj, leaf, value)
    _revalidate(cfg)
    return cfg


def _revalidate(obj):
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            _revalidate(v)
    post = getattr(obj, "__post_init__", None)
    if post is not None:
        post()


def parse_config_text(text: str, source="<config>") -> dict:
    items = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"{source}:{lineno}: empty key")
        items[key] = value.strip()
    return items


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        apply_overrides(cfg, parse_config_text(Path(path).read_text(), str(path)))
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg


def flatten(cfg, prefix="") -> dict:
    """Dotted-key view of a nested config, the inverse of ``apply_overrides``."""
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(v):
            out.update(flatten(v, key + "."))
        else:
            out[key] = list(v) if isinstance(v, tuple) else v
    return out


def dump_config(cfg) -> str:
    lines = []
    for k, v in flatten(cfg).items():
        if isinstance(v, list):
            v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        elif v is None:
            v = "none"
        elif isinstance(v, bool):
            v = str(v).lower()
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
