"""Theme-based opinion summarization over large review corpora."""
from .bench import (
    DuplicationPattern,
    MmrConfig,
    apply_pattern,
    builtin_patterns,
    filter_quality_clusters,
    generate_benchmark,
    mmr_select,
    strategic_select,
)
from .clustering import CohesionStats, cluster_group, cohesion, select_representatives
from .config import ConfigError, PipelineConfig, load_config
from .density import ClusteringResult, HdbscanParams, hdbscan
from .domain import GroupKey, OpinionTuple, Review, Sentiment, Summary, ThemeDefinition, ThemeSet
from .evaluation import JudgeVerdict, PreferenceTally, aspect_coverage_f1, pairwise_judge, tally
from .extraction import ExtractionConfig, extract_with_shuffles, refine_precision
from .gateway import CompletionRequest, HttpGateway, ProviderConfig
from .mock import MockGateway
from .pipeline import MissingInput, Pipeline
from .refinement import RefinementConfig, apply_human_decisions, semantic_dedup

__all__ = [
    "ClusteringResult",
    "CohesionStats",
    "CompletionRequest",
    "ConfigError",
    "DuplicationPattern",
    "ExtractionConfig",
    "GroupKey",
    "HdbscanParams",
    "HttpGateway",
    "JudgeVerdict",
    "MissingInput",
    "MmrConfig",
    "MockGateway",
    "OpinionTuple",
    "Pipeline",
    "PipelineConfig",
    "PreferenceTally",
    "ProviderConfig",
    "RefinementConfig",
    "Review",
    "Sentiment",
    "Summary",
    "ThemeDefinition",
    "ThemeSet",
    "apply_human_decisions",
    "apply_pattern",
    "aspect_coverage_f1",
    "builtin_patterns",
    "cluster_group",
    "cohesion",
    "extract_with_shuffles",
    "filter_quality_clusters",
    "generate_benchmark",
    "hdbscan",
    "load_config",
    "mmr_select",
    "pairwise_judge",
    "refine_precision",
    "select_representatives",
    "semantic_dedup",
    "strategic_select",
    "tally",
]
