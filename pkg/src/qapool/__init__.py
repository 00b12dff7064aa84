"""qapool: build an LLM-generated QA demonstration pool, pick in-context
examples per test question via clustered retrieval, and score the answers."""

from .clustering import KMeansModel, fit_kmeans, fit_kmeans_matrix
from .datagen import (
    DatagenConfig,
    PassageRecord,
    PoolEntry,
    QaRecord,
    TopicSpec,
    build_dataset,
    default_manifest,
    double_check,
    extract_entities,
    generate_explanation,
    generate_passage,
    generate_question,
    list_topic_examples,
)
from .embedding import Embedder, EmbeddingIndex, EmbeddingVector, ProviderConfig, cosine, unit_vector
from .evalkit import (
    EvalReport,
    TestSample,
    evaluate,
    exact_match,
    f1_score,
    load_dataset,
    normalize_answer,
    sample_subset,
)
from .gateway import BackendConfig, CompletionRequest, CompletionResult, Gateway, cache_key, complete
from .prompting import (
    Demonstration,
    InferenceOutput,
    PromptFormat,
    assemble_followup_prompt,
    assemble_prompt,
    infer,
    parse_completion,
    postprocess_webq,
)
from .selection import SelectionConfig, SelectionResult, select

__version__ = "0.1.0"

__all__ = [
    "BackendConfig",
    "CompletionRequest",
    "CompletionResult",
    "DatagenConfig",
    "Demonstration",
    "Embedder",
    "EmbeddingIndex",
    "EmbeddingVector",
    "EvalReport",
    "Gateway",
    "InferenceOutput",
    "KMeansModel",
    "PassageRecord",
    "PoolEntry",
    "PromptFormat",
    "ProviderConfig",
    "QaRecord",
    "SelectionConfig",
    "SelectionResult",
    "TestSample",
    "TopicSpec",
    "assemble_followup_prompt",
    "assemble_prompt",
    "build_dataset",
    "cache_key",
    "complete",
    "cosine",
    "default_manifest",
    "double_check",
    "evaluate",
    "exact_match",
    "extract_entities",
    "f1_score",
    "fit_kmeans",
    "fit_kmeans_matrix",
    "generate_explanation",
    "generate_passage",
    "generate_question",
    "infer",
    "list_topic_examples",
    "load_dataset",
    "normalize_answer",
    "parse_completion",
    "postprocess_webq",
    "sample_subset",
    "select",
    "unit_vector",
]
