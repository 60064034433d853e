"""
Run and evaluation configuration.

A config file is YAML (JSON is accepted too, being a YAML subset)::

    config_version: 1
    manifest: manifest.csv
    models: [VibrantVS, Meta]
    resolutions: [0.5, 10, 30]
    output_dir: out
    seed: 0
    jobs: 1
    evaluation:
      min_height: 2.0
      block_px: 40
      nodata_default: -9999
      height_bins: [2, 5, 10, 15, 20, 25, 30, 35, 40, 50]
      hist_bin_edges: [0, 5, 10, ...]

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import yaml

from .errors import ConfigError

CONFIG_VERSION = 1

DEFAULT_HEIGHT_BINS = (2.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 50.0)
DEFAULT_HIST_EDGES = tuple(float(e) for e in range(0, 82, 2))


@dataclass(frozen=True)
class EvalConfig:
    min_height: float = 2.0
    block_px: int = 40
    nodata_default: float = -9999.0
    height_bins: Tuple[float, ...] = DEFAULT_HEIGHT_BINS
    hist_bin_edges: Tuple[float, ...] = DEFAULT_HIST_EDGES
    height_range: Tuple[float, float] = (-10.0, 200.0)

    def __post_init__(self):
        if self.block_px < 1:
            raise ConfigError(f"block_px must be >= 1, got {self.block_px}")
        for name in ("height_bins", "hist_bin_edges", "height_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        object.__setattr__(self, "min_height", float(self.min_height))
        object.__setattr__(self, "nodata_default", float(self.nodata_default))
        object.__setattr__(self, "block_px", int(self.block_px))

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def fingerprint(self) -> str:
        """Short hash of every setting that changes metric values."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    models: Tuple[str, ...]
    output_dir: Path
    resolutions: Tuple[float, ...] = (0.5, 10.0, 30.0)
    seed: int = 0
    jobs: int = 1
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    source: Optional[Path] = None
    raw: dict = field(default_factory=dict, compare=False)

    def config_hash(self) -> str:
        blob = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def echo(self) -> dict:
        """The config as written in the file, for embedding in outputs."""
        return self.raw or {
            "config_version": CONFIG_VERSION,
            "manifest": str(self.manifest),
            "models": list(self.models),
            "resolutions": list(self.resolutions),
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "jobs": self.jobs,
            "evaluation": self.evaluation.to_dict(),
        }


def _as_list(value, name) -> List:
    if isinstance(value, (list, tuple)):
        return list(value)
    raise ConfigError(f"'{name}' must be a list")


def parse_config(data: dict, base_dir: Path = Path(".")) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    version = data.get("config_version")
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config_version {version!r} (expected {CONFIG_VERSION})")
    for key in ("manifest", "models"):
        if key not in data:
            raise ConfigError(f"missing required key '{key}'")
    ev = data.get("evaluation") or {}
    known = {"min_height", "block_px", "nodata_default", "height_bins", "hist_bin_edges", "height_range"}
    unknown = set(ev) - known
    if unknown:
        raise ConfigError(f"unknown evaluation keys: {sorted(unknown)}")
    try:
        evaluation = EvalConfig(**ev)
        models = tuple(str(m) for m in _as_list(data["models"], "models"))
        resolutions = tuple(float(r) for r in _as_list(data.get("resolutions", [0.5, 10, 30]), "resolutions"))
        seed = int(data.get("seed", 0))
        jobs = int(data.get("jobs", 1))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if not models:
        raise ConfigError("'models' must name at least one model")
    if jobs < 1:
        raise ConfigError("'jobs' must be >= 1")

    def resolve(p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else (base_dir / p)

    return RunConfig(
        manifest=resolve(data["manifest"]),
        models=models,
        output_dir=resolve(data.get("output_dir", "out")),
        resolutions=resolutions,
        seed=seed,
        jobs=jobs,
        evaluation=evaluation,
        raw=data,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg = parse_config(data, path.parent)
    if not cfg.manifest.exists():
        raise ConfigError(f"manifest not found: {cfg.manifest}")
    return RunConfig(**{**cfg.__dict__, "source": path})
