"""Synthetic labeled corpus and retrieval benchmark.

The generator plants, for every query, gold passages (the query's metric
terms plus the figures echoed in its statement) and decoy passages that
repeat the query's terminology in boilerplate without a single figure.
Decoys look excellent to similarity search and useless to the support
gate, which is exactly the failure mode the two-phase pipeline exists to
remove. The benchmark compares three systems on the same corpus:
dense-only cosine ranking, a fused hybrid ranking, and the full judged
pipeline.

Everything is driven by one integer seed; equal seeds produce equal
corpora and equal reports, byte for byte (reports carry no timestamps).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import InvalidParams, NoGoldLabels
from .index import IndexedCorpus, dense_top_k, embed_text, hybrid_retrieve
from .ingest import SegmentedDocument, SegmentKind, parse_document
from .judge import QueryStatement
from .pipeline import PipelineConfig, make_embedder, make_judge_client, run_query

SYSTEM_DENSE = "DenseOnly"
SYSTEM_HYBRID = "HybridOnly"
SYSTEM_FULL = "FullPipeline"
SYSTEMS = (SYSTEM_DENSE, SYSTEM_HYBRID, SYSTEM_FULL)

DEFAULT_K_VALUES = (1, 5, 10)

# Two-word metric phrases with globally disjoint vocabulary, so one query's
# gold and decoy passages never share terms with another query.
METRIC_PHRASES = (
    ("adjusted", "leverage"),
    ("recurring", "margin"),
    ("consolidated", "liquidity"),
    ("deferred", "amortization"),
    ("tangible", "solvency"),
    ("hedged", "exposure"),
    ("subordinated", "indebtedness"),
    ("unsecured", "borrowings"),
    ("restricted", "collateral"),
    ("cyclical", "receivables"),
    ("weighted", "maturity"),
    ("incremental", "capex"),
    ("organic", "turnover"),
    ("statutory", "provisioning"),
    ("discounted", "valuation"),
    ("accrued", "payables"),
    ("diluted", "earnings"),
    ("impaired", "goodwill"),
    ("contingent", "guarantees"),
    ("revolving", "facility"),
    ("secured", "covenants"),
    ("floating", "coupon"),
    ("amortizing", "principal"),
    ("callable", "debenture"),
)

_HEADINGS = (
    "Overview",
    "Financial review",
    "Notes to the accounts",
    "Operating commentary",
    "Risk remarks",
    "Supplementary schedules",
    "General disclosures",
    "Period summary",
)

# Decoy boilerplate: repeats the metric phrase, contains no digits, and
# shares no token with the figures-only financial statement.
_DECOY_FRAMES = (
    "The {phrase} outlook remains broadly stable according to commentary. "
    "Stakeholders continue to monitor the {phrase} in line with stated policy.",
    "Discussion of the {phrase} appears throughout the narrative disclosures. "
    "Management reiterated its stance on the {phrase} without further detail.",
    "Observers describe the {phrase} as a frequent theme of engagement. "
    "No change to the {phrase} posture was communicated this cycle.",
)

_FILLER_SENTENCES = (
    "The governance committee reviewed internal procedures during the period.",
    "Administrative documentation was updated following the oversight meeting.",
    "Personnel completed the planned compliance training workshops.",
    "Workflow approvals moved to the shared calendar without incident.",
    "Minutes from the planning meeting were circulated to all attendees.",
)


class SegmentLabel(str, Enum):
    GOLD = "gold"
    DECOY = "decoy"
    NEUTRAL = "neutral"


@dataclass
class LabeledCorpus:
    """Seed-determined corpus with sparse gold/decoy labels.

    ``labels`` stores only Gold and Decoy pairs; any (query, segment) pair
    not present is Neutral.
    """

    documents: list[SegmentedDocument]
    labels: dict[tuple[str, str], SegmentLabel]
    queries: list[tuple[str, QueryStatement]]
    seed: int

    def label(self, query_id: str, segment_id: str) -> SegmentLabel:
        return self.labels.get((query_id, segment_id), SegmentLabel.NEUTRAL)

    def gold_ids(self, query_id: str) -> set[str]:
        return {
            sid
            for (qid, sid), lab in self.labels.items()
            if qid == query_id and lab == SegmentLabel.GOLD
        }


@dataclass
class BenchReport:
    """Per-query and mean precision/recall for each system.

    ``per_query[system][query_id]`` and ``means[system]`` map metric names
    like ``"precision@5"`` to values in [0, 1]. Deterministic in the seed;
    carries no run ids or timestamps.
    """

    seed: int
    k_values: list[int]
    systems: list[str]
    per_query: dict[str, dict[str, dict[str, float]]]
    means: dict[str, dict[str, float]]
    query_errors: dict[str, str] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Corpus generation
# ---------------------------------------------------------------------------

@dataclass
class _Planted:
    query_id: str | None  # None for filler
    label: SegmentLabel
    markdown: str
    has_table: bool


def _gold_narrative(heading: str, phrase: str, fig_a: str, fig_b: str) -> str:
    return (
        f"## {heading}\n\n"
        f"The {phrase} stood at {fig_a} for the period, compared with {fig_b} "
        f"previously. Auditors confirmed the {phrase} figures during fieldwork."
    )


def _gold_pipe_table(heading: str, phrase: str, fig_a: str, fig_b: str) -> str:
    return (
        f"## {heading}\n\n"
        "The following schedule summarizes reported amounts.\n\n"
        "| Item | Current | Prior |\n"
        "| --- | --- | --- |\n"
        f"| {phrase} | {fig_a} | {fig_b} |\n"
        "| Basis of preparation | unaudited | unaudited |"
    )


def _gold_html_table(heading: str, phrase: str, fig_a: str, fig_b: str) -> str:
    return (
        f"## {heading}\n\n"
        "The following schedule summarizes reported amounts.\n\n"
        "<table>\n"
        '  <tr><th rowspan="2">Item</th><th colspan="2">Reported</th></tr>\n'
        "  <tr><th>Current</th><th>Prior</th></tr>\n"
        f"  <tr><td>{phrase}</td><td>{fig_a}</td><td>{fig_b}</td></tr>\n"
        "</table>"
    )


def _decoy(heading: str, phrase: str, frame: str) -> str:
    return f"## {heading}\n\n" + frame.format(phrase=phrase)


def _filler(heading: str, rng: random.Random) -> str:
    sentences = rng.sample(_FILLER_SENTENCES, 2)
    return f"## {heading}\n\n" + " ".join(sentences)


def generate_synthetic_corpus(
    seed: int, n_docs: int, n_queries: int
) -> LabeledCorpus:
    """Build a deterministic corpus with planted gold and decoy passages.

    Each query receives one narrative gold, one table gold (every third
    query an irregular HTML table instead of a pipe table), and two
    decoys, scattered over random documents. Every document additionally
    carries neutral filler sections and page markers.
    """
    if n_docs < 2:
        raise InvalidParams("n_docs must be >= 2")
    if n_queries < 1:
        raise InvalidParams("n_queries must be >= 1")
    if n_queries > len(METRIC_PHRASES):
        raise InvalidParams(
            f"n_queries must be <= {len(METRIC_PHRASES)} (disjoint phrase pool)"
        )

    rng = random.Random(seed)
    phrase_indices = rng.sample(range(len(METRIC_PHRASES)), n_queries)
    per_doc: list[list[_Planted]] = [[] for _ in range(n_docs)]
    queries: list[tuple[str, QueryStatement]] = []

    def heading(i: int) -> str:
        return _HEADINGS[i % len(_HEADINGS)]

    for qi, phrase_idx in enumerate(phrase_indices):
        adjective, noun = METRIC_PHRASES[phrase_idx]
        phrase = f"{adjective} {noun}"
        query_id = f"q{qi:02d}"
        fig_a = f"{rng.randint(1000, 9999):,}"
        fig_b = f"{rng.randint(1000, 9999):,}"
        queries.append(
            (query_id, QueryStatement(f"what is the {phrase}", f"{fig_a}; {fig_b}"))
        )
        table_builder = _gold_html_table if qi % 3 == 0 else _gold_pipe_table
        items = [
            _Planted(query_id, SegmentLabel.GOLD,
                     _gold_narrative(heading(rng.randrange(8)), phrase, fig_a, fig_b),
                     has_table=False),
            _Planted(query_id, SegmentLabel.GOLD,
                     table_builder(heading(rng.randrange(8)), phrase, fig_a, fig_b),
                     has_table=True),
            _Planted(query_id, SegmentLabel.DECOY,
                     _decoy(heading(rng.randrange(8)), phrase, _DECOY_FRAMES[qi % 3]),
                     has_table=False),
            _Planted(query_id, SegmentLabel.DECOY,
                     _decoy(heading(rng.randrange(8)), phrase,
                            _DECOY_FRAMES[(qi + 1) % 3]),
                     has_table=False),
        ]
        for item in items:
            per_doc[rng.randrange(n_docs)].append(item)

    for doc_items in per_doc:
        for _ in range(2):
            doc_items.insert(
                rng.randrange(len(doc_items) + 1),
                _Planted(None, SegmentLabel.NEUTRAL,
                         _filler(heading(rng.randrange(8)), rng), has_table=False),
            )

    documents: list[SegmentedDocument] = []
    labels: dict[tuple[str, str], SegmentLabel] = {}
    for di, doc_items in enumerate(per_doc):
        parts = []
        page = 1
        for j, item in enumerate(doc_items):
            if j and j % 2 == 0:
                page += 1
                parts.append(f"<!-- page: {page} -->")
            parts.append(item.markdown)
        doc_id = f"doc{di:03d}"
        source, segments = parse_document(
            "\n\n".join(parts),
            doc_id=doc_id,
            title=f"Synthetic filing {di + 1}",
            source_path=f"synthetic/{doc_id}.md",
            language="en",
        )
        documents.append(SegmentedDocument(source, segments))

        # Sections map 1:1 (narrative) or 1:2 (intro + lifted table) onto
        # segments, in order; the planted label lands on the data-bearing one.
        cursor = 0
        for item in doc_items:
            if item.has_table:
                assert segments[cursor].kind == SegmentKind.NARRATIVE
                cursor += 1
                assert segments[cursor].kind == SegmentKind.TABLE
            else:
                assert segments[cursor].kind == SegmentKind.NARRATIVE
            if item.query_id is not None:
                labels[(item.query_id, segments[cursor].segment_id)] = item.label
            cursor += 1
        assert cursor == len(segments), f"unmapped segments in {doc_id}"

    return LabeledCorpus(documents=documents, labels=labels, queries=queries, seed=seed)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def precision_at_k(result_ids: list[str], gold_ids: set[str], k: int) -> float:
    """Fraction of the top min(k, len(results)) that is gold; empty -> 0."""
    if k < 1:
        raise InvalidParams("k must be >= 1")
    if not result_ids:
        return 0.0
    top = result_ids[:k]
    return sum(1 for sid in top if sid in gold_ids) / len(top)


def recall_at_k(result_ids: list[str], gold_ids: set[str], k: int) -> float:
    """Fraction of all gold segments found in the top k."""
    if k < 1:
        raise InvalidParams("k must be >= 1")
    if not gold_ids:
        raise NoGoldLabels("query has no gold segments")
    top = set(result_ids[:k])
    return sum(1 for sid in gold_ids if sid in top) / len(gold_ids)


# ---------------------------------------------------------------------------
# Benchmark
# ---------------------------------------------------------------------------

def _hybrid_only_ranking(indexed: IndexedCorpus, query: str, k: int) -> list[str]:
    """Rank the hybrid pool by the best available normalized channel score.

    Lexical scores are min-max normalized over the pool; cosine scores map
    through (c + 1) / 2. Each candidate takes the max of its normalized
    scores; ties break by ascending segment_id.
    """
    pool = hybrid_retrieve(indexed.lexical, indexed.dense, indexed.embedder, query, k)
    candidates = [c for c, _ in pool.entries]
    lex_scores = [c.lexical_score for c in candidates if c.lexical_score is not None]
    lo, hi = (min(lex_scores), max(lex_scores)) if lex_scores else (0.0, 0.0)

    def fused(c) -> float:
        parts = []
        if c.lexical_score is not None:
            parts.append((c.lexical_score - lo) / (hi - lo) if hi > lo else 1.0)
        if c.dense_score is not None:
            parts.append((c.dense_score + 1.0) / 2.0)
        return max(parts)

    ranked = sorted(candidates, key=lambda c: (-fused(c), c.segment_id))
    return [c.segment_id for c in ranked]


def run_benchmark(
    corpus: LabeledCorpus,
    cfg: PipelineConfig,
    k_values: tuple[int, ...] = DEFAULT_K_VALUES,
) -> BenchReport:
    """Evaluate the three systems over every corpus query.

    DenseOnly ranks by cosine alone, HybridOnly by fused channel scores,
    FullPipeline by the judged, thresholded pipeline order. Per-query
    pipeline failures are recorded under ``query_errors`` (that query
    scores on whatever result list it produced).
    """
    if not k_values or any(k < 1 for k in k_values):
        raise InvalidParams("k_values must be positive")
    k_values = tuple(sorted(k_values))
    max_k = max(k_values)
    embedder = make_embedder(cfg)
    indexed = IndexedCorpus.build(corpus.documents, embedder)
    judge_client = make_judge_client(cfg)

    per_query: dict[str, dict[str, dict[str, float]]] = {s: {} for s in SYSTEMS}
    query_errors: dict[str, str] = {}

    for query_id, statement in corpus.queries:
        golds = corpus.gold_ids(query_id)
        query_vec = embed_text(embedder, statement.query)
        rankings = {
            SYSTEM_DENSE: [
                c.segment_id for c in dense_top_k(indexed.dense, query_vec, max_k)
            ],
            SYSTEM_HYBRID: _hybrid_only_ranking(indexed, statement.query, max_k),
        }
        record = run_query(indexed, statement, cfg, judge_client=judge_client)
        rankings[SYSTEM_FULL] = list(record.ranked_ids)
        if record.status != "success":
            detail = record.errors[0].message if record.errors else "unknown failure"
            query_errors[query_id] = detail
        for system in SYSTEMS:
            metrics = {}
            for k in k_values:
                metrics[f"precision@{k}"] = precision_at_k(rankings[system], golds, k)
                metrics[f"recall@{k}"] = recall_at_k(rankings[system], golds, k)
            per_query[system][query_id] = metrics

    means: dict[str, dict[str, float]] = {}
    for system in SYSTEMS:
        means[system] = {}
        for k in k_values:
            for metric in (f"precision@{k}", f"recall@{k}"):
                values = [per_query[system][qid][metric] for qid, _ in corpus.queries]
                means[system][metric] = sum(values) / len(values)

    return BenchReport(
        seed=corpus.seed,
        k_values=list(k_values),
        systems=list(SYSTEMS),
        per_query=per_query,
        means=means,
        query_errors=query_errors,
    )


# ---------------------------------------------------------------------------
# Report output
# ---------------------------------------------------------------------------

def report_to_dict(report: BenchReport) -> dict:
    return {
        "seed": report.seed,
        "k_values": report.k_values,
        "systems": report.systems,
        "per_query": report.per_query,
        "means": report.means,
        "query_errors": report.query_errors,
    }


def write_report(report: BenchReport, path: Path) -> None:
    path.write_text(
        json.dumps(report_to_dict(report), ensure_ascii=False, indent=2, sort_keys=True)
        + "\n",
        encoding="utf-8",
    )


def render_report(report: BenchReport) -> str:
    """Plain-text metric table for standard output."""
    metrics = [f"precision@{k}" for k in report.k_values] + [
        f"recall@{k}" for k in report.k_values
    ]
    name_width = max(len(s) for s in report.systems)
    header = "system".ljust(name_width) + "".join(m.rjust(14) for m in metrics)
    lines = [f"seed: {report.seed}", header, "-" * len(header)]
    for system in report.systems:
        row = system.ljust(name_width)
        for metric in metrics:
            row += f"{report.means[system][metric]:.4f}".rjust(14)
        lines.append(row)
    if report.query_errors:
        lines.append(f"query errors: {len(report.query_errors)}")
    return "\n".join(lines)
