"""Run configuration: one YAML file, nested dataclass sections, CLI overrides on top."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .density import HdbscanParams
from .domain import OpinionError
from .gateway import ProviderConfig
from .refinement import RefinementConfig


class ConfigError(OpinionError, ValueError):
    pass


@dataclass(frozen=True)
class ModelsConfig:
    discovery: str = "default"
    extraction: str = "default"
    validation: str = "default"
    summarization: str = "default"
    evaluation: str = "default"


@dataclass(frozen=True)
class DiscoverySection:
    template: str = "discovery_space"
    examples: str = ""


@dataclass(frozen=True)
class ExtractionSection:
    k_shuffles: int = 3
    template: str = "extraction_space"
    validation_template: str = "validation_space"
    examples: str = ""
    validation_examples: str = ""

    def __post_init__(self):
        if self.k_shuffles < 1:
            raise ValueError("k_shuffles must be >= 1")


@dataclass(frozen=True)
class ClusteringSection:
    min_samples: int = 5
    min_cluster_size: int = 5
    cluster_selection_epsilon: float = 0.05
    # on for the pipeline so one tight group of near-duplicates is reported as a cluster
    allow_single_cluster: bool = True
    n_representatives: int = 3

    def __post_init__(self):
        self.params()  # HdbscanParams validates
        if self.n_representatives < 1:
            raise ValueError("n_representatives must be >= 1")

    def params(self) -> HdbscanParams:
        return HdbscanParams(
            self.min_samples, self.min_cluster_size, self.cluster_selection_epsilon, self.allow_single_cluster
        )


@dataclass(frozen=True)
class SummarizationSection:
    theme_template: str = "theme_summary_space"
    product_template: str = "product_summary_space"
    include_noise_opinions: bool = True
    shuffle: bool = False


@dataclass(frozen=True)
class BenchSection:
    enabled: bool = True
    patterns_file: str | None = None
    orderings: tuple[str, ...] = ("grouped", "shuffled")
    target: int = 10
    lam: float = 0.8

    def __post_init__(self):
        if self.target < 1:
            raise ValueError("target must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must lie in [0, 1]")


@dataclass(frozen=True)
class EvaluationSection:
    identify_template: str = "identify_space"
    geval_template: str = "geval_space"
    geval_runs: int = 3
    debias_judge: bool = True
    judge_bench: bool = True
    bench_summary_template: str = "theme_summary_redundancy"
    max_bench_variants: int = 4

    def __post_init__(self):
        if self.geval_runs < 1:
            raise ValueError("geval_runs must be >= 1")


@dataclass(frozen=True)
class PipelineConfig:
    reviews: str = "reviews.jsonl"
    out_dir: str = "out"
    seed: int = 0
    provider: str = "mock"
    mock_embedding_dim: int = 32
    workers: int = 4
    existing_themes: str | None = None  # "preset:space", "preset:peersum" or a JSONL path
    decisions: str | None = None  # defaults to <out_dir>/decisions.json
    templates_dir: str | None = None
    provider_config: ProviderConfig = field(default_factory=ProviderConfig)
    models: ModelsConfig = field(default_factory=ModelsConfig)
    discovery: DiscoverySection = field(default_factory=DiscoverySection)
    refinement: RefinementConfig = field(default_factory=RefinementConfig)
    extraction: ExtractionSection = field(default_factory=ExtractionSection)
    clustering: ClusteringSection = field(default_factory=ClusteringSection)
    summarization: SummarizationSection = field(default_factory=SummarizationSection)
    bench: BenchSection = field(default_factory=BenchSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def __post_init__(self):
        if self.provider not in ("live", "mock"):
            raise ConfigError(f"provider must be 'live' or 'mock', got {self.provider!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def decisions_path(self) -> Path:
        return Path(self.decisions) if self.decisions else Path(self.out_dir) / "decisions.json"

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def digest(self, *sections: str) -> str:
        """sha256 over the named sections (all when none given).

        Worker count and file locations never count: files enter a run id
        through their content digests, so moving a run does not change it.
        """
        d = self.to_dict()
        for key in ("workers",) + _PATH_KEYS:
            d.pop(key)
        if d["existing_themes"] and not d["existing_themes"].startswith("preset:"):
            d["existing_themes"] = "file"
        if d["bench"]["patterns_file"]:
            d["bench"]["patterns_file"] = "file"
        if sections:
            d = {k: d[k] for k in sections}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def _build(cls, data: Mapping[str, Any] | None, where: str):
    if data is None:
        return cls()
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if _has_default(fields[name]) else None
        if dataclasses.is_dataclass(default):
            value = _build(type(default), value, f"{where}.{name}")
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def _has_default(f: dataclasses.Field) -> bool:
    return f.default is not dataclasses.MISSING or f.default_factory is not dataclasses.MISSING


_PATH_KEYS = ("reviews", "out_dir", "decisions", "templates_dir")


def _resolve(value: str | None, base: Path) -> str | None:
    if value is None:
        return None
    p = Path(value).expanduser()
    return str(p if p.is_absolute() else (base / p).resolve())


def config_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".") -> PipelineConfig:
    base = Path(base_dir)
    data = dict(data)
    for key in _PATH_KEYS:
        if data.get(key) is not None:
            data[key] = _resolve(str(data[key]), base)
    et = data.get("existing_themes")
    if et is not None and not str(et).startswith("preset:"):
        data["existing_themes"] = _resolve(str(et), base)
    bench = data.get("bench")
    if isinstance(bench, Mapping) and bench.get("patterns_file") is not None:
        data["bench"] = dict(bench, patterns_file=_resolve(str(bench["patterns_file"]), base))
    return _build(PipelineConfig, data, "config")


def load_config(path: str | Path | None = None, **overrides: Any) -> PipelineConfig:
    """Read the YAML file (paths inside are relative to it), then apply non-None overrides."""
    data: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as e:
            raise ConfigError(f"{path}: {e}") from e
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = loaded or {}
        base = path.resolve().parent
    cfg = config_from_dict(data, base)
    extra = {k: v for k, v in overrides.items() if v is not None}
    if "out_dir" in extra:
        extra["out_dir"] = str(Path(extra["out_dir"]).resolve())
    return dataclasses.replace(cfg, **extra) if extra else cfg
