"""Zero-shot hyperparameter and model recommendation from historical experiments."""

from .core import (
    EncodingTable,
    FeatureVector,
    HyperparameterConfig,
    MetaFeatures,
    PerformanceMetrics,
    SearchSpace,
    compute_meta_features,
    default_search_space,
    encode,
    validate_config,
)
from .store import ExperimentRecord, MetaDataset, append, load, save
from .gbdt import GbdtModel, TrainParams, evaluate, load_model, predict, save_model, train
from .attribution import (
    LocalTopFeatures,
    ShapAttribution,
    ShapSummary,
    aggregate,
    explain_dataset,
    pearson,
    render_summary,
    top_local_features,
    tree_shap,
)
from .retrieval import RetrievedContext, RetrievalIndex, build_context, build_index, query
from .prompting import PromptBundle, Recommendation, build_prompt, parse_recommendation
from .gateway import JudgeScores, LlmEndpointConfig, generate, judge

__version__ = "0.1.0"

__all__ = [
    "EncodingTable",
    "FeatureVector",
    "HyperparameterConfig",
    "MetaFeatures",
    "PerformanceMetrics",
    "SearchSpace",
    "compute_meta_features",
    "default_search_space",
    "encode",
    "validate_config",
    "ExperimentRecord",
    "MetaDataset",
    "append",
    "load",
    "save",
    "GbdtModel",
    "TrainParams",
    "evaluate",
    "load_model",
    "predict",
    "save_model",
    "train",
    "LocalTopFeatures",
    "ShapAttribution",
    "ShapSummary",
    "aggregate",
    "explain_dataset",
    "pearson",
    "render_summary",
    "top_local_features",
    "tree_shap",
    "RetrievedContext",
    "RetrievalIndex",
    "build_context",
    "build_index",
    "query",
    "PromptBundle",
    "Recommendation",
    "build_prompt",
    "parse_recommendation",
    "JudgeScores",
    "LlmEndpointConfig",
    "generate",
    "judge",
]
