"""Evidence extraction for ranked passages.

The extraction strategy follows the segment's structure: narrative
segments yield the minimal contiguous run of blocks containing the term
matches, regular tables yield the header plus matching body rows
re-rendered as a pipe table, and complex tables are cited verbatim
because reshaping merged or multi-header grids risks corrupting them.
Every item carries a citation (document name, section, page range) so the
evidence can be traced back to its source.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .index import tokenize
from .ingest import Cell, Segment, SegmentKind, TableComplexity, classify_table, format_page_range
from .judge import QueryStatement

_HEADING_LINE_RE = re.compile(r"^#{1,6}\s+\S")

NO_MATCH_NARRATIVE = "no term match; returned leading content"
NO_MATCH_TABLE = "no row matched; full table retained"


class ExtractionMode(str, Enum):
    NARRATIVE_SPAN = "narrative_span"
    TABLE_CELLS = "table_cells"
    COMPLEX_TABLE_CITATION = "complex_table_citation"


@dataclass
class Citation:
    doc_title: str
    section_title: str
    page_start: int
    page_end: int

    def __post_init__(self):
        if not self.doc_title:
            raise ValueError("citation requires a document name")
        if self.page_start < 1 or self.page_start > self.page_end:
            raise ValueError("citation requires a valid page range")

    @property
    def pages(self) -> str:
        return format_page_range(self.page_start, self.page_end)


@dataclass
class EvidenceItem:
    segment_id: str
    mode: ExtractionMode
    content: str
    citation: Citation
    matched_rows: list[int] | None = None
    note: str = ""

    def __post_init__(self):
        if not self.content:
            raise ValueError("evidence content must be non-empty")
        if (self.mode == ExtractionMode.TABLE_CELLS) != (self.matched_rows is not None):
            raise ValueError("matched_rows present iff mode is table_cells")


def _citation(s: Segment, doc_title: str) -> Citation:
    return Citation(
        doc_title=doc_title,
        section_title=s.section_title,
        page_start=s.page_start,
        page_end=s.page_end,
    )


def _match_terms(q: QueryStatement) -> set[str]:
    return set(tokenize(q.query)) | set(tokenize(q.financial_statement))


def _block_spans(text: str) -> list[tuple[int, int]]:
    """Blank-line-delimited block spans, trimmed per line."""
    spans: list[tuple[int, int]] = []
    start = last_end = None
    pos = 0
    for line in text.split("\n"):
        end = pos + len(line)
        if line.strip():
            if start is None:
                start = pos
            last_end = end
        elif start is not None:
            spans.append((start, last_end))
            start = None
        pos = end + 1
    if start is not None:
        spans.append((start, last_end))
    return spans


def extract_narrative_span(
    s: Segment, q: QueryStatement, *, doc_title: str
) -> EvidenceItem:
    """Minimal contiguous run of blocks containing every term match.

    Blocks (paragraphs, bullet lists) are never split mid-block; the
    section heading, when it leads the segment text, is kept as a prefix.
    With no match anywhere, the leading block is returned and the item is
    flagged in ``note``.
    """
    text = s.text
    blocks = _block_spans(text)
    heading_span = None
    if blocks:
        first = text[blocks[0][0] : blocks[0][1]]
        if "\n" not in first and _HEADING_LINE_RE.match(first):
            heading_span = blocks[0]
    body_blocks = blocks[1:] if heading_span else blocks

    terms = _match_terms(q)
    matched = [
        i
        for i, (start, end) in enumerate(body_blocks)
        if terms & set(tokenize(text[start:end]))
    ]
    note = ""
    if matched:
        run_start = body_blocks[matched[0]][0]
        run_end = body_blocks[matched[-1]][1]
    elif body_blocks:
        run_start, run_end = body_blocks[0]
        note = NO_MATCH_NARRATIVE
    else:
        # Heading-only segment: the heading is all there is to return.
        run_start, run_end = heading_span
        heading_span = None
        note = NO_MATCH_NARRATIVE

    run = text[run_start:run_end]
    if heading_span and run_start > heading_span[1]:
        content = text[heading_span[0] : heading_span[1]] + "\n\n" + run
    else:
        content = run
    return EvidenceItem(
        segment_id=s.segment_id,
        mode=ExtractionMode.NARRATIVE_SPAN,
        content=content,
        citation=_citation(s, doc_title),
        note=note,
    )


def _render_cell(cell: Cell) -> str:
    return cell.text.replace("|", "\\|")


def _render_pipe_table(header: list[list[Cell]], body: list[list[Cell]]) -> str:
    width = max(len(row) for row in header + body)
    lines = []
    for row in header:
        lines.append("| " + " | ".join(_render_cell(c) for c in row) + " |")
    lines.append("|" + " --- |" * width)
    for row in body:
        lines.append("| " + " | ".join(_render_cell(c) for c in row) + " |")
    return "\n".join(lines)


def extract_table_cells(
    s: Segment, q: QueryStatement, *, doc_title: str
) -> EvidenceItem:
    """Header plus body rows sharing at least one term, as a pipe table.

    ``matched_rows`` holds the kept body-row indices (0-based, relative to
    the body). When nothing matches, the full original table markup is
    retained verbatim and the item is flagged in ``note``.
    """
    table = s.table
    terms = _match_terms(q)
    header = table.rows[: table.header_row_count]
    body = table.rows[table.header_row_count :]
    matched = [
        i
        for i, row in enumerate(body)
        if any(terms & set(tokenize(cell.text)) for cell in row)
    ]
    if not matched:
        return EvidenceItem(
            segment_id=s.segment_id,
            mode=ExtractionMode.TABLE_CELLS,
            content=s.text,
            citation=_citation(s, doc_title),
            matched_rows=[],
            note=NO_MATCH_TABLE,
        )
    content = _render_pipe_table(header, [body[i] for i in matched])
    return EvidenceItem(
        segment_id=s.segment_id,
        mode=ExtractionMode.TABLE_CELLS,
        content=content,
        citation=_citation(s, doc_title),
        matched_rows=matched,
    )


def cite_complex_table(s: Segment, *, doc_title: str) -> EvidenceItem:
    """Verbatim table markup with full source attribution, untransformed."""
    return EvidenceItem(
        segment_id=s.segment_id,
        mode=ExtractionMode.COMPLEX_TABLE_CITATION,
        content=s.text,
        citation=_citation(s, doc_title),
    )


def extract_evidence(s: Segment, q: QueryStatement, *, doc_title: str) -> EvidenceItem:
    """Strategy dispatch on (segment kind, table complexity)."""
    if s.kind == SegmentKind.NARRATIVE:
        return extract_narrative_span(s, q, doc_title=doc_title)
    if s.table.complexity is None:
        classify_table(s.table)
    if s.table.complexity == TableComplexity.NON_COMPLEX:
        return extract_table_cells(s, q, doc_title=doc_title)
    return cite_complex_table(s, doc_title=doc_title)
