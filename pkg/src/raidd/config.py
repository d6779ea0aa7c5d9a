"""Run configuration: file loading, validation and flag overlays.

Precedence, lowest first: built-in defaults, the config file, explicit flags.
Config files are JSON or YAML with these top-level sections::

    backend: mock | openai-compatible
    seed: 0
    mock: {dim, embed_mode}
    provider: ProviderConfig fields
    retrieval: {chunk_size, overlap, top_k, flavor}
    prompts: PromptTemplates fields
    eval: {ccr_threshold, icl_max_pairs, split}
    paths: {corpus, dataset, index, report}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional

import yaml

from .core import ConfigError, RetrievalConfig
from .prompts import PromptTemplates
from .providers.base import ProviderConfig

BACKENDS = ("mock", "openai-compatible")
SPLITS = ("val", "test", "all")


@dataclass(frozen=True)
class MockSettings:
    dim: int = 64
    embed_mode: str = "hash"

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigError("mock.dim must be >= 1")
        if self.embed_mode not in ("hash", "bow"):
            raise ConfigError(f"mock.embed_mode must be 'hash' or 'bow', got {self.embed_mode!r}")


@dataclass(frozen=True)
class EvalSettings:
    ccr_threshold: float = 0.7
    icl_max_pairs: int = 8
    split: str = "test"

    def __post_init__(self) -> None:
        if not 0.0 <= self.ccr_threshold <= 1.0:
            raise ConfigError("eval.ccr_threshold must lie in [0, 1]")
        if self.icl_max_pairs < 0:
            raise ConfigError("eval.icl_max_pairs must be >= 0")
        if self.split not in SPLITS:
            raise ConfigError(f"eval.split must be one of {SPLITS}")


@dataclass(frozen=True)
class Paths:
    corpus: Optional[str] = None
    dataset: Optional[str] = None
    index: Optional[str] = None
    report: Optional[str] = None


@dataclass(frozen=True)
class RunConfig:
    backend: str = "mock"
    seed: int = 0
    mock: MockSettings = field(default_factory=MockSettings)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    prompts: PromptTemplates = field(default_factory=PromptTemplates)
    eval: EvalSettings = field(default_factory=EvalSettings)
    paths: Paths = field(default_factory=Paths)

    def __post_init__(self) -> None:
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")

    def to_dict(self, include_paths: bool = True) -> dict:
        d = {
            "backend": self.backend,
            "seed": self.seed,
            "mock": _asdict(self.mock),
            "provider": self.provider.to_dict(),
            "retrieval": self.retrieval.to_dict(),
            "prompts": self.prompts.to_dict(),
            "eval": _asdict(self.eval),
        }
        if include_paths:
            d["paths"] = _asdict(self.paths)
        return d


def _asdict(obj) -> dict:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}


_SECTIONS = {
    "mock": MockSettings,
    "provider": ProviderConfig,
    "retrieval": RetrievalConfig,
    "prompts": PromptTemplates,
    "eval": EvalSettings,
    "paths": Paths,
}


def _section(name: str, cls, data: Any, base):
    if not isinstance(data, dict):
        raise ConfigError(f"config section {name!r} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    try:
        return replace(base, **data)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid {name!r} section: {e}") from None


def from_mapping(data: Dict[str, Any], base: Optional[RunConfig] = None) -> RunConfig:
    """Overlay a nested mapping onto ``base`` (defaults when None); unknown keys are errors."""
    cfg = base or RunConfig()
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    unknown = sorted(set(data) - {"backend", "seed", *_SECTIONS})
    if unknown:
        raise ConfigError(f"unknown top-level config key(s): {', '.join(unknown)}")
    updates: Dict[str, Any] = {}
    for key in ("backend", "seed"):
        if key in data:
            updates[key] = data[key]
    for name, cls in _SECTIONS.items():
        if name in data:
            updates[name] = _section(name, cls, data[name], getattr(cfg, name))
    try:
        return replace(cfg, **updates)
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e}") from None
    try:
        data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"cannot parse config {p}: {e}") from None
    return from_mapping(data or {})
