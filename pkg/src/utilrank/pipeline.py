"""End-to-end query orchestration and the persisted audit trail.

One query runs four stages in order: hybrid retrieval builds the pool,
judge calls produce per-passage verdicts, the gate and utility threshold
reduce the pool to a ranked set, and extraction turns ranked segments
into cited evidence. Everything the run saw or decided (every candidate,
verdict, error, and the exact configuration) lands in a RunRecord that
persists as one JSON file per run plus an append-only index, so any
output can be traced and reproduced later.

Failure policy is fail-closed: a passage whose judge call fails is
excluded from the gate with an error entry, never given a default
verdict, and any endpoint failure marks the whole run failed rather than
letting a silently incomplete record look successful.
"""

from __future__ import annotations

import json
import uuid
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from .controller import (
    DEFAULT_UTILITY_THRESHOLD,
    CandidateSet,
    Stage,
    filter_relevant_supported,
    rank_by_utility,
)
from .errors import EndpointError, MalformedVerdict, RunNotFound, StoreUnavailable
from .extract import Citation, EvidenceItem, ExtractionMode, extract_evidence
from .index import (
    BUILTIN_DIMENSION,
    DEFAULT_POOL_K,
    HashEmbedder,
    IndexedCorpus,
    Provenance,
    RemoteEmbedder,
    ScoredCandidate,
    hybrid_retrieve,
)
from .judge import (
    EndpointRole,
    HttpJudgeClient,
    JudgeClient,
    JudgeVerdict,
    MockJudgeClient,
    ModelEndpoint,
    QueryStatement,
    StagedJudgeClient,
)


class JudgeMode(str, Enum):
    MOCK = "mock"       # deterministic offline double
    SINGLE = "single"   # one chat endpoint returns all three fields
    STAGED = "staged"   # gate endpoint first, scoring endpoint for utility


@dataclass
class EndpointConfig:
    url: str = ""
    model: str = ""
    timeout: float = 60.0
    max_retries: int = 2


@dataclass
class PipelineConfig:
    top_k: int = DEFAULT_POOL_K
    utility_threshold: float = DEFAULT_UTILITY_THRESHOLD
    judge_mode: JudgeMode = JudgeMode.MOCK
    judge_endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    gate_endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    embed_endpoint: EndpointConfig = field(default_factory=EndpointConfig)
    embed_dimension: int = BUILTIN_DIMENSION
    parallelism: int = 4
    corpus_path: str = ""
    run_store_path: str = "runs"

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0.0 <= self.utility_threshold <= 1.0:
            raise ValueError("utility_threshold must be in [0, 1]")
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")


@dataclass
class RunError:
    stage: str        # "retrieve" | "judge" | "extract"
    segment_id: str   # empty for run-level failures
    message: str
    kind: str         # "endpoint" | "data" | "internal"


@dataclass
class RunRecord:
    """Complete audit artifact for one query run."""

    run_id: str
    timestamp: str
    query: QueryStatement
    config: dict
    pool: list[ScoredCandidate] = field(default_factory=list)
    verdicts: list[JudgeVerdict] = field(default_factory=list)
    gated_ids: list[str] = field(default_factory=list)
    ranked_ids: list[str] = field(default_factory=list)
    evidence: list[EvidenceItem] = field(default_factory=list)
    errors: list[RunError] = field(default_factory=list)
    status: str = "success"

    def __post_init__(self):
        pool_ids = {c.segment_id for c in self.pool}
        gated = set(self.gated_ids)
        if not set(self.ranked_ids) <= gated:
            raise ValueError("ranked_ids must be a subset of gated_ids")
        if not gated <= pool_ids:
            raise ValueError("gated_ids must be a subset of pool ids")
        accounted = {v.segment_id for v in self.verdicts} | {
            e.segment_id for e in self.errors
        }
        unaccounted = pool_ids - accounted
        if unaccounted:
            raise ValueError(
                f"pool candidates without verdict or error: {sorted(unaccounted)[:5]}"
            )


# ---------------------------------------------------------------------------
# Config and client wiring
# ---------------------------------------------------------------------------

def config_to_dict(cfg: PipelineConfig) -> dict:
    data = asdict(cfg)
    data["judge_mode"] = cfg.judge_mode.value
    return data


def config_from_dict(data: dict) -> PipelineConfig:
    known = dict(data)
    known["judge_mode"] = JudgeMode(known.get("judge_mode", JudgeMode.MOCK.value))
    for key in ("judge_endpoint", "gate_endpoint", "embed_endpoint"):
        if key in known and isinstance(known[key], dict):
            known[key] = EndpointConfig(**known[key])
    return PipelineConfig(**known)


def make_embedder(cfg: PipelineConfig):
    if cfg.embed_endpoint.url:
        return RemoteEmbedder(
            cfg.embed_endpoint.url,
            cfg.embed_endpoint.model,
            cfg.embed_dimension,
            timeout=cfg.embed_endpoint.timeout,
            max_retries=cfg.embed_endpoint.max_retries,
        )
    return HashEmbedder(cfg.embed_dimension)


def make_judge_client(cfg: PipelineConfig) -> JudgeClient:
    if cfg.judge_mode == JudgeMode.MOCK:
        return MockJudgeClient()
    judge_endpoint = ModelEndpoint(
        base_url=cfg.judge_endpoint.url,
        model_name=cfg.judge_endpoint.model,
        role=EndpointRole.JUDGE,
        timeout=cfg.judge_endpoint.timeout,
        max_retries=cfg.judge_endpoint.max_retries,
    )
    if cfg.judge_mode == JudgeMode.SINGLE:
        return HttpJudgeClient(judge_endpoint)
    gate_endpoint = ModelEndpoint(
        base_url=cfg.gate_endpoint.url,
        model_name=cfg.gate_endpoint.model,
        role=EndpointRole.CONTROLLER,
        timeout=cfg.gate_endpoint.timeout,
        max_retries=cfg.gate_endpoint.max_retries,
    )
    return StagedJudgeClient(gate_endpoint, judge_endpoint)


# ---------------------------------------------------------------------------
# Query execution
# ---------------------------------------------------------------------------

def _new_run_id() -> tuple[str, str]:
    now = datetime.now(timezone.utc)
    run_id = now.strftime("%Y%m%dT%H%M%SZ") + "-" + uuid.uuid4().hex[:8]
    return run_id, now.isoformat()


def run_query(
    corpus: IndexedCorpus,
    q: QueryStatement,
    cfg: PipelineConfig,
    judge_client: JudgeClient | None = None,
) -> RunRecord:
    """Execute retrieval, judging, gating, ranking, and extraction.

    Always returns a RunRecord; ``status`` says whether it can be trusted
    as a complete result. Retrieval uses the raw query text; judging sees
    the full query-plus-statement. Judge calls run concurrently but all
    recorded orderings follow ascending segment_id, so records are
    reproducible under the deterministic mock judge and builtin embedder.
    """
    run_id, timestamp = _new_run_id()
    errors: list[RunError] = []
    client = judge_client if judge_client is not None else make_judge_client(cfg)

    try:
        pool_set = hybrid_retrieve(
            corpus.lexical, corpus.dense, corpus.embedder, q.query, cfg.top_k
        )
    except EndpointError as exc:
        errors.append(RunError("retrieve", "", str(exc), "endpoint"))
        return RunRecord(
            run_id=run_id,
            timestamp=timestamp,
            query=q,
            config=config_to_dict(cfg),
            errors=errors,
            status="failed",
        )
    pool_set.query = q
    pool = [candidate for candidate, _ in pool_set.entries]

    def judge_one(segment_id: str) -> JudgeVerdict:
        segment = corpus.segments[segment_id]
        doc = corpus.documents[segment.doc_id]
        return client.judge(q, segment, doc_title=doc.title or doc.doc_id)

    verdict_by_id: dict[str, JudgeVerdict] = {}
    error_by_id: dict[str, RunError] = {}
    with ThreadPoolExecutor(max_workers=cfg.parallelism) as executor:
        futures = {
            executor.submit(judge_one, c.segment_id): c.segment_id for c in pool
        }
        for future in as_completed(futures):
            segment_id = futures[future]
            try:
                verdict_by_id[segment_id] = future.result()
            except EndpointError as exc:
                error_by_id[segment_id] = RunError("judge", segment_id, str(exc), "endpoint")
            except MalformedVerdict as exc:
                error_by_id[segment_id] = RunError("judge", segment_id, str(exc), "data")
            except Exception as exc:  # noqa: BLE001 - fail closed, keep the run alive
                error_by_id[segment_id] = RunError("judge", segment_id, str(exc), "internal")

    verdicts = [verdict_by_id[c.segment_id] for c in pool if c.segment_id in verdict_by_id]
    errors.extend(error_by_id[c.segment_id] for c in pool if c.segment_id in error_by_id)

    # Unjudged candidates are excluded from the gate (their error entries
    # explain why); the full pool stays in the record.
    judged_pool = CandidateSet(
        stage=Stage.POOL,
        entries=[e for e in pool_set.entries if e[0].segment_id in verdict_by_id],
        query=q,
    )
    gated = filter_relevant_supported(judged_pool, verdict_by_id)
    ranked = rank_by_utility(gated, cfg.utility_threshold)

    evidence: list[EvidenceItem] = []
    ranked_ids: list[str] = []
    for candidate, _ in ranked.entries:
        segment = corpus.segments[candidate.segment_id]
        doc = corpus.documents[segment.doc_id]
        try:
            item = extract_evidence(segment, q, doc_title=doc.title or doc.doc_id)
        except Exception as exc:  # noqa: BLE001 - drop the item, keep alignment
            errors.append(RunError("extract", candidate.segment_id, str(exc), "internal"))
            continue
        evidence.append(item)
        ranked_ids.append(candidate.segment_id)

    status = "failed" if any(e.kind == "endpoint" for e in errors) else "success"
    return RunRecord(
        run_id=run_id,
        timestamp=timestamp,
        query=q,
        config=config_to_dict(cfg),
        pool=pool,
        verdicts=verdicts,
        gated_ids=gated.segment_ids(),
        ranked_ids=ranked_ids,
        evidence=evidence,
        errors=errors,
        status=status,
    )


# ---------------------------------------------------------------------------
# Record serialization
# ---------------------------------------------------------------------------

def record_to_dict(record: RunRecord) -> dict:
    return {
        "run_id": record.run_id,
        "timestamp": record.timestamp,
        "query": {
            "query": record.query.query,
            "financial_statement": record.query.financial_statement,
        },
        "config": record.config,
        "pool": [
            {
                "segment_id": c.segment_id,
                "lexical_score": c.lexical_score,
                "dense_score": c.dense_score,
                "provenance": c.provenance.value,
            }
            for c in record.pool
        ],
        "verdicts": [
            {
                "segment_id": v.segment_id,
                "relevant": v.relevant,
                "supported": v.supported,
                "utility": v.utility,
                "rationale": v.rationale,
                "model_id": v.model_id,
            }
            for v in record.verdicts
        ],
        "gated_ids": list(record.gated_ids),
        "ranked_ids": list(record.ranked_ids),
        "evidence": [
            {
                "segment_id": item.segment_id,
                "mode": item.mode.value,
                "content": item.content,
                "citation": {
                    "doc_title": item.citation.doc_title,
                    "section_title": item.citation.section_title,
                    "page_start": item.citation.page_start,
                    "page_end": item.citation.page_end,
                },
                "matched_rows": item.matched_rows,
                "note": item.note,
            }
            for item in record.evidence
        ],
        "errors": [
            {"stage": e.stage, "segment_id": e.segment_id, "message": e.message, "kind": e.kind}
            for e in record.errors
        ],
        "status": record.status,
    }


def record_from_dict(data: dict) -> RunRecord:
    return RunRecord(
        run_id=data["run_id"],
        timestamp=data["timestamp"],
        query=QueryStatement(**data["query"]),
        config=data["config"],
        pool=[
            ScoredCandidate(
                segment_id=c["segment_id"],
                lexical_score=c["lexical_score"],
                dense_score=c["dense_score"],
                provenance=Provenance(c["provenance"]),
            )
            for c in data["pool"]
        ],
        verdicts=[JudgeVerdict(**v) for v in data["verdicts"]],
        gated_ids=list(data["gated_ids"]),
        ranked_ids=list(data["ranked_ids"]),
        evidence=[
            EvidenceItem(
                segment_id=item["segment_id"],
                mode=ExtractionMode(item["mode"]),
                content=item["content"],
                citation=Citation(**item["citation"]),
                matched_rows=item["matched_rows"],
                note=item["note"],
            )
            for item in data["evidence"]
        ],
        errors=[RunError(**e) for e in data["errors"]],
        status=data["status"],
    )


def result_document(record: RunRecord) -> dict:
    """Compact query result: the evidence plus per-stage counts.

    This is what the CLI prints and the service returns; the full audit
    detail stays in the persisted record.
    """
    utility_by_id = {v.segment_id: v.utility for v in record.verdicts}
    return {
        "run_id": record.run_id,
        "status": record.status,
        "query": {
            "query": record.query.query,
            "financial_statement": record.query.financial_statement,
        },
        "evidence": [
            {
                "segment_id": item.segment_id,
                "mode": item.mode.value,
                "content": item.content,
                "citation": {
                    "doc_title": item.citation.doc_title,
                    "section_title": item.citation.section_title,
                    "pages": item.citation.pages,
                },
                "utility": utility_by_id.get(item.segment_id),
                "matched_rows": item.matched_rows,
                "note": item.note,
            }
            for item in record.evidence
        ],
        "stages": {
            "pool": len(record.pool),
            "gated": len(record.gated_ids),
            "ranked": len(record.ranked_ids),
        },
        "errors": [
            {"stage": e.stage, "segment_id": e.segment_id, "message": e.message, "kind": e.kind}
            for e in record.errors
        ],
    }


# ---------------------------------------------------------------------------
# Run store (one JSON file per run + append-only index)
# ---------------------------------------------------------------------------

def persist_run(record: RunRecord, store_path: Path | str) -> str:
    """Write the record durably; returns the stored run_id."""
    store = Path(store_path)
    try:
        store.mkdir(parents=True, exist_ok=True)
        run_file = store / f"{record.run_id}.json"
        run_file.write_text(
            json.dumps(record_to_dict(record), ensure_ascii=False, indent=2),
            encoding="utf-8",
        )
        index_entry = {
            "run_id": record.run_id,
            "timestamp": record.timestamp,
            "query": record.query.query,
            "status": record.status,
            "ranked": len(record.ranked_ids),
        }
        with (store / "index.jsonl").open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(index_entry, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise StoreUnavailable(f"run store {store}: {exc}") from exc
    return record.run_id


def load_run(store_path: Path | str, run_id: str) -> RunRecord:
    run_file = Path(store_path) / f"{run_id}.json"
    try:
        raw = run_file.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise RunNotFound(f"no run {run_id!r} in {store_path}") from None
    except OSError as exc:
        raise StoreUnavailable(f"run store {store_path}: {exc}") from exc
    return record_from_dict(json.loads(raw))


def list_runs(store_path: Path | str) -> list[dict]:
    """Index entries in append order; empty list for a fresh store."""
    index_file = Path(store_path) / "index.jsonl"
    if not index_file.exists():
        return []
    entries = []
    with index_file.open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                entries.append(json.loads(line))
    return entries
