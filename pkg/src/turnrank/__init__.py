"""Conversational passage-ranking pipelines.

Retrieve-then-rerank cascades over conversational queries, two-view
pseudo-label synthesis with training-file emission, rank fusion, and
TREC-style evaluation (nDCG@k, paired t-tests, per-query latency).
"""

from .datamodel import (
    ConversationalQuery,
    LabelingSource,
    Passage,
    PassageCollection,
    Qrels,
    RankedList,
    RunEntry,
    parse_corpus,
    parse_qrels,
    parse_topics,
    read_run,
    write_qrels,
    write_run,
)
from .errors import ContractViolation, InputError, RemoteScoringError
from .evaluation import (
    LatencyReport,
    MetricReport,
    TTestResult,
    measure_latency,
    ndcg_at_k,
    paired_t_test,
)
from .fusion import EnsembleList, ensemble_filter, reverse_ensemble_filter, rrf
from .labeling import (
    LabeledSet,
    LabelingConfig,
    build_answer_view,
    build_query_view,
    emit_training_file,
    sample_labels,
)
from .pipeline import (
    CascadeResult,
    LabelingResult,
    PipelineConfig,
    load_pipeline_config,
    run_cascade,
    run_labeling,
)
from .retrieval import Analyzer, InvertedIndex, build_index
from .scoring import (
    RenderedInput,
    TokenBudgets,
    lexical_scorer,
    remote_scorer,
    render_input,
    rerank,
    split_rendered,
)

__version__ = "0.1.0"

__all__ = [
    "Analyzer",
    "CascadeResult",
    "ContractViolation",
    "ConversationalQuery",
    "EnsembleList",
    "InputError",
    "InvertedIndex",
    "LabeledSet",
    "LabelingConfig",
    "LabelingResult",
    "LabelingSource",
    "LatencyReport",
    "MetricReport",
    "Passage",
    "PassageCollection",
    "PipelineConfig",
    "Qrels",
    "RankedList",
    "RemoteScoringError",
    "RenderedInput",
    "RunEntry",
    "TTestResult",
    "TokenBudgets",
    "build_answer_view",
    "build_index",
    "build_query_view",
    "emit_training_file",
    "ensemble_filter",
    "load_pipeline_config",
    "measure_latency",
    "ndcg_at_k",
    "paired_t_test",
    "parse_corpus",
    "parse_qrels",
    "parse_topics",
    "read_run",
    "remote_scorer",
    "render_input",
    "rerank",
    "reverse_ensemble_filter",
    "rrf",
    "run_cascade",
    "run_labeling",
    "sample_labels",
    "split_rendered",
    "lexical_scorer",
    "write_qrels",
    "write_run",
]
