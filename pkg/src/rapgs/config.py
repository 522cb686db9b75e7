"""Run configuration: defaults <- ``key = value`` file <- command-line flags."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ValidationError
from .evaluation import DEFAULT_RATIOS
from .train import TrainConfig


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in str(text).replace(",", " ").split())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class RunConfig(TrainConfig):
    threads: int = 1
    hist_bins: int = 10
    rate_mode: str = "bytes"
    ratios: tuple = DEFAULT_RATIOS

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in self.as_dict().items() if k in names})

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> dict:
        out = {}
        for k, v in self.as_dict().items():
            out[k] = list(v) if isinstance(v, tuple) else v
        return out


def _converter(name: str):
    f = {f.name: f for f in fields(RunConfig)}[name]
    default = f.default
    if isinstance(default, bool):
        return _bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        return _floats
    return str


DECLARED_KEYS = tuple(f.name for f in fields(RunConfig))


def coerce(key: str, value):
    if key not in DECLARED_KEYS:
        raise ValidationError(f"unknown config key {key!r}")
    try:
        out = _converter(key)(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad value for {key}: {exc}") from None
    if key == "background" and len(out) != 3:
        raise ValidationError("background needs 3 values")
    return out


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = coerce(key, value)
        except ValidationError as exc:
            raise ValidationError(f"{source}:{lineno}: {exc}") from None
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults, the optional config file and non-None ``overrides``."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(), str(path)))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = coerce(k, v)
    cfg = RunConfig(**values)
    cfg.validate()
    if cfg.threads < 1:
        raise ValidationError("threads must be >= 1")
    if cfg.hist_bins < 2:
        raise ValidationError("hist_bins must be >= 2")
    return cfg
