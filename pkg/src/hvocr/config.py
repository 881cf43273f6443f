"""Pipeline configuration: one flat ``key = value`` file.

The file is read with :mod:`configparser`; every key lives in a single
``[pipeline]`` section.  Values are validated against the preconditions of
the module that consumes them before any work starts, and every error names
the offending field.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

from .hypothesis import RecognizerConfig
from .network import TrainConfig
from .segmentation import SOURCES

PathLike = Union[str, os.PathLike]
SECTION = "pipeline"


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field name."""


@dataclass
class PipelineConfig:
    # data synthesis
    seed: int = 0
    glyph_seed: int = 0
    vocabulary_size: int = 200
    train_words: int = 2000
    test_words: int = 500
    lines_min: int = 2
    lines_max: int = 4
    words_per_line_min: int = 2
    words_per_line_max: int = 4
    crowding_min: float = 0.0
    crowding_max: float = 0.0
    noise_density: float = 0.0
    interline_gap: int = 10
    interword_gap: int = 12
    # network and training
    hidden_sizes: Tuple[int, ...] = (16, 16, 16)
    peepholes: bool = True
    learning_rate: float = 1e-4
    momentum: float = 0.9
    init_range: float = 0.1
    gate_bias: Tuple[float, float, float] = (1.0, -1.0, 2.0)
    max_epochs: int = 100
    patience: int = 10
    batch_size: int = 1
    validation_fraction: float = 0.1
    # segmentation and recognition
    min_gap: int = 3
    min_ink: int = 0
    avg_line_height: int = 22
    theta_tolerance: float = 2.0
    accumulator_bins: int = 5
    peak_fraction: float = 0.3
    gap_threshold: int = 6
    target_height: int = 16
    despeckle: int = 6
    penalty: float = 1.0
    overlap_threshold: float = 0.3
    window: int = 1
    branches: Tuple[str, ...] = SOURCES
    branch_priority: Tuple[str, ...] = SOURCES
    alphabet: str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
    # paths
    dataset: str = "dataset"
    model: str = "model.blstm"
    lm: str = "lm.ngrams"
    transcripts: str = "transcripts"

    def __post_init__(self):
        validate(self)

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, momentum=self.momentum,
                           init_range=self.init_range, gate_bias=tuple(self.gate_bias),
                           max_epochs=self.max_epochs, patience=self.patience,
                           batch_size=self.batch_size, rng_seed=self.seed)

    def recognizer_config(self) -> RecognizerConfig:
        names = {f.name for f in fields(RecognizerConfig)}
        return RecognizerConfig(**{k: getattr(self, k) for k in names})

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def to_text(self) -> str:
        rows = [f"[{SECTION}]"]
        for f in fields(self):
            rows.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(rows) + "\n"


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format(v) for v in value)
    return str(value)


def _check(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"{name}: {message}")


def validate(cfg: PipelineConfig) -> None:
    for name in ("vocabulary_size", "train_words", "lines_min", "words_per_line_min", "target_height",
                 "avg_line_height", "min_gap", "gap_threshold", "max_epochs", "batch_size",
                 "accumulator_bins"):
        _check(getattr(cfg, name) >= 1, name, f"must be >= 1, got {getattr(cfg, name)}")
    for name in ("test_words", "min_ink", "interline_gap", "interword_gap", "patience", "despeckle",
                 "window", "penalty", "init_range"):
        _check(getattr(cfg, name) >= 0, name, f"must be >= 0, got {getattr(cfg, name)}")
    _check(cfg.lines_max >= cfg.lines_min, "lines_max", "must be >= lines_min")
    _check(cfg.words_per_line_max >= cfg.words_per_line_min, "words_per_line_max",
           "must be >= words_per_line_min")
    for name in ("crowding_min", "crowding_max", "noise_density", "overlap_threshold", "peak_fraction"):
        v = getattr(cfg, name)
        _check(0.0 <= v <= 1.0, name, f"must lie in [0, 1], got {v}")
    _check(cfg.crowding_max >= cfg.crowding_min, "crowding_max", "must be >= crowding_min")
    _check(0.0 <= cfg.validation_fraction < 1.0, "validation_fraction", "must lie in [0, 1)")
    _check(cfg.learning_rate > 0, "learning_rate", f"must be > 0, got {cfg.learning_rate}")
    _check(0.0 <= cfg.momentum < 1.0, "momentum", f"must lie in [0, 1), got {cfg.momentum}")
    _check(cfg.theta_tolerance >= 0, "theta_tolerance", "must be >= 0")
    _check(len(cfg.hidden_sizes) >= 1 and min(cfg.hidden_sizes) >= 1, "hidden_sizes",
           "needs at least one layer, every size >= 1")
    _check(len(cfg.gate_bias) == 3, "gate_bias", "needs three values (input, forget, output)")
    _check(len(cfg.branches) >= 1, "branches", "needs at least one routine")
    for name in ("branches", "branch_priority"):
        bad = [b for b in getattr(cfg, name) if b not in SOURCES]
        _check(not bad, name, f"unknown routine(s) {bad}; choose from {list(SOURCES)}")
        _check(len(set(getattr(cfg, name))) == len(getattr(cfg, name)), name, "repeated routine")
    _check(len(set(cfg.alphabet)) == len(cfg.alphabet) and not any(c.isspace() for c in cfg.alphabet),
           "alphabet", "must be distinct non-space characters")


def _parse(name: str, raw: str, default: Any) -> Any:
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, tuple):
            parts = [p.strip() for p in raw.replace(",", " ").split()]
            kind = type(default[0]) if default else str
            return tuple(kind(p) for p in parts)
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r} as {type(default).__name__}") from None


def from_mapping(values: Mapping[str, Any], base: PipelineConfig = None) -> PipelineConfig:
    """Overlay ``values`` (strings or typed) onto ``base`` and validate."""
    base = base or PipelineConfig()
    known = {f.name: getattr(base, f.name) for f in fields(base)}
    changes: Dict[str, Any] = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"{key}: unknown configuration field")
        changes[key] = _parse(key, value, known[key]) if isinstance(value, str) else value
    return dataclasses.replace(base, **changes)


def load_config(path: PathLike) -> PipelineConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    extra = [s for s in parser.sections() if s != SECTION]
    if extra:
        raise ConfigError(f"{extra[0]}: unknown section, expected only [{SECTION}]")
    return from_mapping(dict(parser[SECTION]) if parser.has_section(SECTION) else {})


def save_config(cfg: PipelineConfig, path: PathLike) -> None:
    Path(path).write_text(cfg.to_text(), encoding="utf-8")
