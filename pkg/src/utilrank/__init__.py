"""Utility-gated evidence retrieval for long financial documents.

Two-phase engine: a high-recall hybrid pool (BM25 union exact dense
cosine) followed by judge-model gating on relevance and evidence support,
utility thresholding, and structure-aware evidence extraction. Every run
persists a complete audit record.
"""

from .controller import (
    DEFAULT_UTILITY_THRESHOLD,
    CandidateSet,
    Stage,
    filter_relevant_supported,
    rank_by_utility,
)
from .errors import (
    EndpointError,
    InvalidThreshold,
    MalformedVerdict,
    MissingVerdict,
    ModelUnavailable,
    ProviderUnavailable,
    RunNotFound,
    StoreUnavailable,
    UtilrankError,
)
from .extract import (
    Citation,
    EvidenceItem,
    ExtractionMode,
    cite_complex_table,
    extract_evidence,
    extract_narrative_span,
    extract_table_cells,
)
from .index import (
    DEFAULT_POOL_K,
    DenseIndex,
    HashEmbedder,
    IndexedCorpus,
    LexicalIndex,
    Provenance,
    RemoteEmbedder,
    ScoredCandidate,
    build_dense_index,
    build_lexical_index,
    dense_top_k,
    embed_text,
    hybrid_retrieve,
    lexical_top_k,
    tokenize,
)
from .ingest import (
    Cell,
    DocumentSource,
    Segment,
    SegmentedDocument,
    SegmentKind,
    TableBlock,
    TableComplexity,
    classify_table,
    detect_tables,
    parse_document,
    segment_markdown,
)
from .judge import (
    HttpJudgeClient,
    JudgeVerdict,
    MockJudgeClient,
    ModelEndpoint,
    QueryStatement,
    StagedJudgeClient,
    build_judge_prompt,
    judge_passage,
    mock_judge_verdict,
    parse_verdict,
    render_verdict,
)
from .pipeline import (
    JudgeMode,
    PipelineConfig,
    RunRecord,
    list_runs,
    load_run,
    persist_run,
    result_document,
    run_query,
)

__version__ = "0.1.0"

__all__ = [
    "CandidateSet",
    "Cell",
    "Citation",
    "DEFAULT_POOL_K",
    "DEFAULT_UTILITY_THRESHOLD",
    "DenseIndex",
    "DocumentSource",
    "EndpointError",
    "EvidenceItem",
    "ExtractionMode",
    "HashEmbedder",
    "HttpJudgeClient",
    "IndexedCorpus",
    "InvalidThreshold",
    "JudgeMode",
    "JudgeVerdict",
    "LexicalIndex",
    "MalformedVerdict",
    "MissingVerdict",
    "MockJudgeClient",
    "ModelEndpoint",
    "ModelUnavailable",
    "PipelineConfig",
    "Provenance",
    "ProviderUnavailable",
    "QueryStatement",
    "RemoteEmbedder",
    "RunNotFound",
    "RunRecord",
    "ScoredCandidate",
    "Segment",
    "SegmentKind",
    "SegmentedDocument",
    "Stage",
    "StagedJudgeClient",
    "StoreUnavailable",
    "TableBlock",
    "TableComplexity",
    "UtilrankError",
    "build_dense_index",
    "build_judge_prompt",
    "build_lexical_index",
    "cite_complex_table",
    "classify_table",
    "dense_top_k",
    "detect_tables",
    "embed_text",
    "extract_evidence",
    "extract_narrative_span",
    "extract_table_cells",
    "filter_relevant_supported",
    "hybrid_retrieve",
    "judge_passage",
    "lexical_top_k",
    "list_runs",
    "load_run",
    "mock_judge_verdict",
    "parse_document",
    "parse_verdict",
    "persist_run",
    "rank_by_utility",
    "render_verdict",
    "result_document",
    "run_query",
    "segment_markdown",
    "tokenize",
]
