"""Declarative pipeline configuration: strict keys, validated bounds, path resolution."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .ingest import DEFAULT_EXCLUDE, DEFAULT_INCLUDE, DEFAULT_WEIGHTS


class ConfigError(Exception):
    """Fatal configuration problem; maps to exit code 2."""


def _build(cls, data: Mapping[str, Any] | None, context: str):
    data = data or {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{context}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{context}: unknown keys {unknown}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: {exc}") from exc


@dataclass(frozen=True)
class PathsConfig:
    instances: str = "instances.jsonl"
    output_dir: str = "runs/default"
    base_dir: str | None = None


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    script: str | None = None
    endpoint: str | None = None
    model: str | None = None
    seed: int | None = None
    exhausted: str = "wrap"
    timeout: float = 30.0
    retries: int = 2

    def __post_init__(self):
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"backend.kind must be mock or remote, got {self.kind!r}")
        if self.exhausted not in ("wrap", "error"):
            raise ValueError(f"backend.exhausted must be wrap or error, got {self.exhausted!r}")
        if self.kind == "mock" and not self.script:
            raise ValueError("mock backend requires a script path")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError("remote backend requires an endpoint")
        if self.timeout <= 0 or self.retries < 0:
            raise ValueError("backend timeout must be positive and retries nonnegative")


@dataclass(frozen=True)
class IngestSection:
    include: tuple[str, ...] = DEFAULT_INCLUDE
    exclude: tuple[str, ...] = DEFAULT_EXCLUDE
    max_chunk_units: int = 2000
    overlap_lines: int = 8
    context_budget: int = 2000
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))

    def __post_init__(self):
        if self.max_chunk_units <= self.overlap_lines:
            raise ValueError("max_chunk_units must exceed overlap_lines")
        if self.overlap_lines < 0 or self.context_budget < 0:
            raise ValueError("overlap_lines and context_budget must be nonnegative")
        bad = {k: v for k, v in self.weights.items() if v < 0}
        if bad:
            raise ValueError(f"negative context weights: {bad}")


@dataclass(frozen=True)
class LocalizeSection:
    alpha: float = 0.7
    k1: float = 1.2
    b: float = 0.75
    top_k_files: int = 5
    max_locations: int = 5
    lexical_only: bool = False

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("localize.alpha must be in [0, 1]")
        if self.k1 <= 0 or not 0.0 <= self.b <= 1.0:
            raise ValueError("localize.k1 must be positive and b in [0, 1]")
        if self.top_k_files < 1 or self.max_locations < 1:
            raise ValueError("top_k_files and max_locations must be >= 1")


@dataclass(frozen=True)
class SearchSection:
    enabled: bool = True
    c1: float = 1.4
    beta: float = 1.0
    expansions: int = 3
    iterations: int = 16
    max_depth: int = 4
    simulation_budget: int = 512
    temperature: float = 0.6

    def __post_init__(self):
        if self.c1 <= 0 or self.beta < 0 or self.temperature < 0:
            raise ValueError("search constants out of range")
        for name in ("expansions", "iterations", "max_depth", "simulation_budget"):
            if getattr(self, name) <= 0:
                raise ValueError(f"search.{name} must be positive")


@dataclass(frozen=True)
class RefineSection:
    enabled: bool = True
    weights: tuple[float, float, float] = (0.2, 0.5, 0.3)
    max_iter: int = 3
    epsilon: float = 0.01

    def __post_init__(self):
        if len(self.weights) != 3 or min(self.weights) < 0 or abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("refine.weights must be three nonnegative values summing to 1")
        if self.max_iter < 0 or self.epsilon < 0:
            raise ValueError("refine.max_iter and epsilon must be nonnegative")


@dataclass(frozen=True)
class CalibrateSection:
    bins: int = 10

    def __post_init__(self):
        if self.bins < 1:
            raise ValueError("calibrate.bins must be >= 1")


@dataclass(frozen=True)
class HarnessSection:
    runner: str = "simulator"
    script: str | None = None
    timeout: float = 120.0

    def __post_init__(self):
        if self.runner not in ("simulator", "subprocess"):
            raise ValueError(f"harness.runner must be simulator or subprocess, got {self.runner!r}")
        if self.runner == "simulator" and not self.script:
            raise ValueError("simulator runner requires a script path")
        if self.timeout <= 0:
            raise ValueError("harness.timeout must be positive")


@dataclass(frozen=True)
class PipelineConfig:
    paths: PathsConfig
    backend: BackendConfig
    ingest: IngestSection
    localize: LocalizeSection
    search: SearchSection
    refine: RefineSection
    calibrate: CalibrateSection
    harness: HarnessSection
    thinking: bool = True
    workers: int = 1
    config_dir: str = "."
    raw_text: str = ""

    def __post_init__(self):
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def resolve(self, path: str) -> Path:
        """Resolve a config-relative path against the config file's directory."""
        p = Path(path)
        return p if p.is_absolute() else Path(self.config_dir) / p


_SECTIONS = {
    "paths": PathsConfig,
    "backend": BackendConfig,
    "ingest": IngestSection,
    "localize": LocalizeSection,
    "search": SearchSection,
    "refine": RefineSection,
    "calibrate": CalibrateSection,
    "harness": HarnessSection,
}
_SCALARS = {"thinking", "workers"}


def config_from_dict(data: Mapping[str, Any], config_dir: str = ".", raw_text: str = "") -> PipelineConfig:
    if not isinstance(data, Mapping):
        raise ConfigError("config root must be a mapping")
    unknown = sorted(set(data) - set(_SECTIONS) - _SCALARS)
    if unknown:
        raise ConfigError(f"unknown top-level keys: {unknown}")
    sections = {name: _build(cls, data.get(name), name) for name, cls in _SECTIONS.items()}
    try:
        return PipelineConfig(
            **sections,
            thinking=bool(data.get("thinking", True)),
            workers=int(data.get("workers", 1)),
            config_dir=config_dir,
            raw_text=raw_text,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | Path) -> PipelineConfig:
    """Load and validate the pipeline config; unknown keys are fatal."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    return config_from_dict(data, config_dir=str(p.parent), raw_text=text)
