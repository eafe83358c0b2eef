"""Layer-pruning search: evolutionary and baseline strategies over a fitness oracle."""

from .baselines import exhaustive_search, greedy_search, random_search
from .calibration import (
    CalibrationDataset,
    DatasetConfig,
    HashedNgramEmbedder,
    build_dataset,
    chunk_corpus,
    load_dataset,
    save_dataset,
)
from .clustering import ClusterAssignment, kmeans
from .core import (
    BudgetExceeded,
    DegenerateSparsity,
    FitnessRecord,
    PruningPattern,
    SearchReport,
    SparsityConfig,
    derive_pruned_count,
    pattern_space_size,
)
from .evolution import GAConfig, Population, evolution_search, init_population
from .oracle import FitnessOracle, LocalToyOracle, RemoteOracle, resolve_oracle
from .toylm import (
    CalibrationSample,
    ToyLM,
    ToyLMConfig,
    average_loss,
    encode_text,
    forward_nll,
    init_model,
    load_model,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "BudgetExceeded",
    "CalibrationDataset",
    "CalibrationSample",
    "ClusterAssignment",
    "DatasetConfig",
    "DegenerateSparsity",
    "FitnessOracle",
    "FitnessRecord",
    "GAConfig",
    "HashedNgramEmbedder",
    "LocalToyOracle",
    "Population",
    "PruningPattern",
    "RemoteOracle",
    "SearchReport",
    "SparsityConfig",
    "ToyLM",
    "ToyLMConfig",
    "average_loss",
    "build_dataset",
    "chunk_corpus",
    "derive_pruned_count",
    "encode_text",
    "evolution_search",
    "exhaustive_search",
    "forward_nll",
    "greedy_search",
    "init_model",
    "init_population",
    "kmeans",
    "load_dataset",
    "load_model",
    "pattern_space_size",
    "random_search",
    "resolve_oracle",
    "save_dataset",
    "save_model",
]
