"""Shared configuration for the command-line tools.

A YAML mapping whose keys are the :class:`Config` field names.  The file
comes from ``--config`` or, failing that, the ``HERDPIPE_CONFIG``
environment variable.  Unknown keys are rejected.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import yaml

from .extract import DEFAULT_EXTRACTOR, DEFAULT_OVERLAY
from .timesync import DEFAULT_COLUMNS, as_frame_rate
from .vtt import DEFAULT_LABELS

ENV_VAR = "HERDPIPE_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    frame_rate: str = "30"
    frame_size: tuple[int, int] = (1920, 1080)
    labels: tuple[str, ...] = DEFAULT_LABELS
    strict: bool = True
    split_ratios: tuple[float, ...] = (0.70, 0.05, 0.25)
    split_seed: int = 0
    split_mode: str = "random"
    iou_thresholds: tuple[float, ...] = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))
    recall_points: int = 101
    max_dets: int = 100
    window: float = 1.0
    export_stride: float = 1.0
    inference_stride: float = 0.5
    gap_tolerance: float = 0.5
    min_duration: float = 0.0
    out_size: int = 256
    extractor: str = DEFAULT_EXTRACTOR
    overlay_command: str = DEFAULT_OVERLAY
    scorer: str = ""
    timeout: float = 120.0
    retries: int = 0
    workers: int = 1
    max_drift: float = 0.01
    gps_columns: tuple[str, str, str, str] = tuple(DEFAULT_COLUMNS.values())

    def __post_init__(self):
        try:
            as_frame_rate(self.frame_rate)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"frame_rate: {exc}") from None
        if len(self.frame_size) != 2 or min(self.frame_size) <= 0:
            raise ConfigError(f"frame_size must be two positive integers, got {self.frame_size}")
        if not self.labels or len(set(self.labels)) != len(self.labels):
            raise ConfigError(f"labels must be a non-empty list of distinct names, got {self.labels}")
        if any(r <= 0 for r in self.split_ratios) or abs(sum(self.split_ratios) - 1) > 1e-9:
            raise ConfigError(f"split_ratios must be positive and sum to 1, got {self.split_ratios}")
        if self.split_mode not in ("random", "chronological", "per-cue"):
            raise ConfigError(f"split_mode must be random, chronological or per-cue, got {self.split_mode!r}")
        if not all(0 < t <= 1 for t in self.iou_thresholds) or not self.iou_thresholds:
            raise ConfigError(f"iou_thresholds must lie in (0, 1], got {self.iou_thresholds}")
        for name in ("window", "export_stride", "inference_stride"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("gap_tolerance", "min_duration", "timeout", "max_drift"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.recall_points < 2 or self.max_dets < 1 or self.out_size < 1 or self.workers < 1:
            raise ConfigError("recall_points >= 2, max_dets >= 1, out_size >= 1, workers >= 1 required")
        if self.retries < 0:
            raise ConfigError("retries must be non-negative")

    @property
    def fps(self):
        return as_frame_rate(self.frame_rate)

    @property
    def gps_column_map(self) -> dict:
        return dict(zip(DEFAULT_COLUMNS, self.gps_columns))

    def as_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


FIELD_TYPES = {f.name: f.type for f in fields(Config)}


def coerce(name: str, value):
    """Convert a YAML value or a command-line string to the type of field ``name``."""
    kind = FIELD_TYPES[name]
    default = getattr(Config, name)
    try:
        if kind.startswith("tuple"):
            if isinstance(value, str):
                value = [v.strip() for v in value.replace("x", ",").split(",")] if name == "frame_size" \
                    else [v.strip() for v in value.split(",")]
            item = type(default[0]) if default else str
            return tuple(item(v) for v in value)
        if kind == "bool":
            if isinstance(value, str):
                low = value.lower()
                if low not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(f"not a boolean: {value!r}")
                return low in ("true", "1", "yes")
            return bool(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def load_config(path=None, overrides: dict | None = None) -> Config:
    """Defaults, then the config file, then ``overrides`` (already-parsed flag values)."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    values = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a mapping of settings")
        unknown = sorted(set(raw) - set(FIELD_TYPES))
        if unknown:
            raise ConfigError(f"{path}: unknown config keys {unknown}")
        values.update({k: coerce(k, v) for k, v in raw.items()})
    for k, v in (overrides or {}).items():
        if k not in FIELD_TYPES:
            raise ConfigError(f"unknown config key {k!r}")
        values[k] = coerce(k, v)
    return replace(Config(), **values)
