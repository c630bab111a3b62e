"""Run configuration: one validated record shared by every CLI entry point."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = "betaflow.config.v1"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    d: int = 1
    n: int = 2
    eps: float = 0.02
    eps_max: float = 0.1
    alpha: float = 0.5
    gamma: float | None = None
    K: int = 4
    fit_radius_mult: float = 10.0
    samples: int = 256
    jones_samples: int = 48
    trace_samples: int = 24
    grid_points: int = 2048
    inverse_points: int = 240
    seed: int = 0
    workers: int = 1
    input: str | None = None
    output: str | None = None

    def __post_init__(self):
        if not 1 <= self.d <= self.n:
            raise ConfigError(f"need 1 <= d <= n, got d={self.d}, n={self.n}")
        if not 0 < self.eps <= 0.1:
            raise ConfigError(f"eps must lie in (0, 0.1], got {self.eps}")
        if not 0 < self.alpha <= 1:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.alpha == 1.0 and (self.gamma is None or self.gamma <= 0.5):
            raise ConfigError("alpha = 1 requires gamma > 1/2")
        if self.gamma is not None and self.gamma <= 0.5:
            raise ConfigError(f"gamma must exceed 1/2, got {self.gamma}")
        if self.K < 0:
            raise ConfigError(f"K must be >= 0, got {self.K}")
        if self.samples < 32:
            raise ConfigError(f"need at least 32 plane-distance samples, got {self.samples}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["schema_version"] = SCHEMA_VERSION
        return doc


def load_config(path: str | None, overrides: dict) -> RunConfig:
    """TOML file (optional) merged with non-None CLI overrides."""
    data: dict = {}
    if path:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
    known = {f.name for f in fields(RunConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None and k in known})
    try:
        return RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def content_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def dump_artifact(path: str, payload: dict):
    """Deterministic JSON: sorted keys, stable float repr, no timestamps."""
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1, allow_nan=True)
        fh.write("\n")
