"""Markdown corpus ingestion.

Long documents are parsed into metadata-tagged segments: narrative sections
split at ATX headings, and tables lifted out into their own segments so the
extraction stage can treat them structurally. Page attribution comes from
``<!-- page: N -->`` comment markers, which are paging metadata rather than
document content: marker-only lines never belong to a segment, so a page
break also splits the narrative segment around it.

Corpus files are markdown with a YAML front-matter block carrying ``doc_id``,
``title``, ``source`` and ``language``. Ingested segments persist to
``segments.jsonl`` (one record per segment) with a ``documents.json``
sidecar for document-level metadata.
"""

from __future__ import annotations

import bisect
import json
import re
from dataclasses import dataclass, field
from enum import Enum
from html.parser import HTMLParser
from pathlib import Path

import yaml

from .errors import (
    EmptyDocument,
    FrontMatterError,
    MalformedPageMarker,
    UnclosedTable,
)

# Narrative segments longer than this are split at the nearest preceding
# block boundary; a single oversized block stays whole.
MAX_NARRATIVE_CHARS = 4000

_HEADING_RE = re.compile(r"^(#{1,6})\s+(.*?)(?:\s+#+)?\s*$")
_PAGE_MARKER_RE = re.compile(r"<!--\s*page:\s*(\S+?)\s*-->")
_MARKER_LINE_RE = re.compile(r"^\s*<!--\s*page:\s*\S+?\s*-->\s*$")
_DELIM_CELL_RE = re.compile(r"^:?-+:?$")
_TABLE_OPEN_RE = re.compile(r"<table\b", re.IGNORECASE)
_TABLE_CLOSE_RE = re.compile(r"</table\s*>", re.IGNORECASE)


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

class SegmentKind(str, Enum):
    NARRATIVE = "narrative"
    TABLE = "table"


class TableComplexity(str, Enum):
    COMPLEX = "complex"
    NON_COMPLEX = "non_complex"


@dataclass
class DocumentSource:
    """One corpus document and its file-level metadata."""

    doc_id: str
    title: str
    source_path: str
    language: str
    page_count: int

    def __post_init__(self):
        if not self.doc_id:
            raise ValueError("doc_id must be non-empty")
        if self.page_count < 1:
            raise ValueError("page_count must be >= 1")


@dataclass
class Cell:
    text: str
    row_span: int = 1
    col_span: int = 1

    def __post_init__(self):
        if self.row_span < 1 or self.col_span < 1:
            raise ValueError("cell spans must be positive")


@dataclass
class TableBlock:
    """Parsed table grid. ``complexity`` is set by :func:`classify_table`."""

    rows: list[list[Cell]]
    header_row_count: int
    col_count: int
    complexity: TableComplexity | None = None

    @property
    def body_rows(self) -> list[list[Cell]]:
        return self.rows[self.header_row_count:]


@dataclass
class Segment:
    """An indexed passage with structural metadata.

    ``text`` is always the exact source slice at ``char_span``; the page
    range is derived from the marker positions around that span.
    """

    segment_id: str
    doc_id: str
    section_title: str
    page_start: int
    page_end: int
    kind: SegmentKind
    text: str
    char_span: tuple[int, int]
    table: TableBlock | None = None

    def __post_init__(self):
        if self.page_start > self.page_end:
            raise ValueError("page_start must be <= page_end")
        start, end = self.char_span
        if start >= end:
            raise ValueError("char_span must be non-empty")
        if (self.kind == SegmentKind.TABLE) != (self.table is not None):
            raise ValueError("table payload present iff kind is table")


@dataclass
class SegmentedDocument:
    source: DocumentSource
    segments: list[Segment] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Low-level block scanning
# ---------------------------------------------------------------------------

@dataclass
class _Block:
    kind: str  # "heading" | "marker" | "table" | "text"
    start: int
    end: int
    title: str = ""
    page: int = 0
    table: TableBlock | None = None


def _line_spans(text: str) -> list[tuple[int, int]]:
    """(start, end) offsets of each line, excluding the newline."""
    spans = []
    pos = 0
    for line in text.split("\n"):
        spans.append((pos, pos + len(line)))
        pos += len(line) + 1
    return spans


def _is_delimiter_row(line: str) -> bool:
    stripped = line.strip()
    if "|" not in stripped and "-" not in stripped:
        return False
    cells = _split_pipe_row(line)
    return bool(cells) and all(_DELIM_CELL_RE.match(c) for c in cells if c) and any(
        "-" in c for c in cells
    )


def _split_pipe_row(line: str) -> list[str]:
    stripped = line.strip()
    if stripped.startswith("|"):
        stripped = stripped[1:]
    if stripped.endswith("|"):
        stripped = stripped[:-1]
    return [cell.strip() for cell in stripped.split("|")]


def _parse_pipe_table(lines: list[str]) -> TableBlock:
    """lines[0] is the header, lines[1] the delimiter, the rest body rows."""
    col_count = len(_split_pipe_row(lines[1]))
    rows = [[Cell(t) for t in _split_pipe_row(lines[0])]]
    for line in lines[2:]:
        rows.append([Cell(t) for t in _split_pipe_row(line)])
    return TableBlock(rows=rows, header_row_count=1, col_count=max(col_count, 1))


class _HTMLTableParser(HTMLParser):
    """Collects rows of Cells with rowspan/colspan from one <table> element.

    A row counts as a header row when it sits inside <thead> or every one of
    its cells is a <th>.
    """

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.rows: list[list[Cell]] = []
        self.row_flags: list[list[bool]] = []  # [in_thead, all_th]
        self._in_thead = False
        self._cell_parts: list[str] | None = None
        self._cell_spans = (1, 1)
        self._cell_is_th = False

    @staticmethod
    def _span(attrs: list[tuple[str, str | None]], name: str) -> int:
        for key, value in attrs:
            if key == name and value is not None:
                try:
                    return max(int(value), 1)
                except ValueError:
                    return 1
        return 1

    def _open_row(self):
        self.rows.append([])
        self.row_flags.append([self._in_thead, True])

    def handle_starttag(self, tag, attrs):
        if tag == "thead":
            self._in_thead = True
        elif tag == "tr":
            self._open_row()
        elif tag in ("td", "th"):
            if not self.rows:
                self._open_row()
            self._cell_parts = []
            self._cell_spans = (self._span(attrs, "rowspan"), self._span(attrs, "colspan"))
            self._cell_is_th = tag == "th"

    def handle_endtag(self, tag):
        if tag == "thead":
            self._in_thead = False
        elif tag in ("td", "th") and self._cell_parts is not None:
            text = re.sub(r"\s+", " ", "".join(self._cell_parts)).strip()
            row_span, col_span = self._cell_spans
            self.rows[-1].append(Cell(text, row_span, col_span))
            if not self._cell_is_th:
                self.row_flags[-1][1] = False
            self._cell_parts = None

    def handle_data(self, data):
        if self._cell_parts is not None:
            self._cell_parts.append(data)


def _parse_html_table(markup: str) -> TableBlock | None:
    parser = _HTMLTableParser()
    parser.feed(markup)
    parser.close()
    rows = []
    flags = []
    for row, (in_thead, all_th) in zip(parser.rows, parser.row_flags):
        if row:
            rows.append(row)
            flags.append(in_thead or all_th)
    if not rows:
        return None
    header_rows = 0
    for is_header in flags:
        if not is_header:
            break
        header_rows += 1
    col_count = max(sum(c.col_span for c in row) for row in rows)
    return TableBlock(rows=rows, header_row_count=header_rows, col_count=col_count)


def _scan_blocks(text: str) -> list[_Block]:
    """Split a markdown body into heading/marker/table/text blocks."""
    lines = text.split("\n")
    spans = _line_spans(text)
    blocks: list[_Block] = []
    i = 0

    def is_pipe_table_start(idx: int) -> bool:
        return (
            "|" in lines[idx]
            and not _is_delimiter_row(lines[idx])
            and idx + 1 < len(lines)
            and _is_delimiter_row(lines[idx + 1])
        )

    while i < len(lines):
        line = lines[i]
        if not line.strip():
            i += 1
            continue
        if _MARKER_LINE_RE.match(line):
            raw = _PAGE_MARKER_RE.search(line).group(1)
            blocks.append(_Block("marker", spans[i][0], spans[i][1], page=_marker_page(raw)))
            i += 1
            continue
        heading = _HEADING_RE.match(line)
        if heading:
            blocks.append(
                _Block("heading", spans[i][0], spans[i][1], title=heading.group(2).strip())
            )
            i += 1
            continue
        open_match = _TABLE_OPEN_RE.search(line)
        if open_match is not None:
            start = spans[i][0] + open_match.start()
            lead = _trim_span(text, spans[i][0], start)
            if lead[0] < lead[1]:
                blocks.append(_Block("text", lead[0], lead[1]))
            close = _TABLE_CLOSE_RE.search(text, start)
            if close is None:
                raise UnclosedTable(f"<table> at offset {start} has no closing tag")
            end = close.end()
            table = _parse_html_table(text[start:end])
            if table is None:
                blocks.append(_Block("text", start, end))
            else:
                blocks.append(_Block("table", start, end, table=table))
            while i < len(lines) and spans[i][1] < end:
                i += 1
            if i < len(lines):
                tail = _trim_span(text, end, spans[i][1])
                if tail[0] < tail[1]:
                    blocks.append(_Block("text", tail[0], tail[1]))
            i += 1
            continue
        if is_pipe_table_start(i):
            j = i + 2
            while j < len(lines) and lines[j].strip() and "|" in lines[j]:
                j += 1
            table = _parse_pipe_table(lines[i:j])
            blocks.append(_Block("table", spans[i][0], spans[j - 1][1], table=table))
            i = j
            continue
        # Plain text run: extend until a blank line or a special block starts.
        j = i
        while j < len(lines):
            candidate = lines[j]
            if not candidate.strip():
                break
            if j > i and (
                _MARKER_LINE_RE.match(candidate)
                or _HEADING_RE.match(candidate)
                or _TABLE_OPEN_RE.search(candidate)
                or is_pipe_table_start(j)
            ):
                break
            j += 1
        blocks.append(_Block("text", spans[i][0], spans[j - 1][1]))
        i = j
    return blocks


def _marker_page(raw: str) -> int:
    if not raw.isdigit():
        raise MalformedPageMarker(f"page marker {raw!r} is not a positive integer")
    page = int(raw)
    if page < 1:
        raise MalformedPageMarker(f"page marker {raw!r} must be >= 1")
    return page


def _collect_markers(text: str) -> list[tuple[int, int]]:
    """All (offset, page) markers, validated as ascending."""
    markers = []
    previous = 0
    for match in _PAGE_MARKER_RE.finditer(text):
        page = _marker_page(match.group(1))
        if page <= previous:
            raise MalformedPageMarker(
                f"page marker {page} follows page {previous}; markers must ascend"
            )
        previous = page
        markers.append((match.start(), page))
    return markers


def _trim_span(text: str, start: int, end: int) -> tuple[int, int]:
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    return start, end


def format_page_range(page_start: int, page_end: int) -> str:
    """Human-readable page reference: "12" for one page, "12-13" for a range."""
    if page_start == page_end:
        return str(page_start)
    return f"{page_start}-{page_end}"


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def segment_markdown(text: str) -> list[tuple[str, str, tuple[int, int]]]:
    """Split markdown at ATX headings into (section_title, body, char_span).

    Content before the first heading becomes a section with an empty title;
    bullet lists and paragraph boundaries inside a body are untouched. The
    span covers the trimmed body, so ``text[start:end] == body``. Headingless
    text yields a single section; empty or whitespace-only input yields none.
    """
    sections: list[tuple[str, str, tuple[int, int]]] = []
    title = ""
    anchor = 0
    body_start: int | None = None
    body_end: int | None = None

    def flush():
        nonlocal body_start, body_end
        if body_start is not None:
            start, end = _trim_span(text, body_start, body_end)
            if start < end:
                sections.append((title, text[start:end], (start, end)))
                body_start = body_end = None
                return
        if title:
            sections.append((title, "", (anchor, anchor)))
        body_start = body_end = None

    pos = 0
    for line in text.split("\n"):
        end = pos + len(line)
        heading = _HEADING_RE.match(line)
        if heading:
            flush()
            title = heading.group(2).strip()
            anchor = min(end + 1, len(text))
        elif line.strip():
            if body_start is None:
                body_start = pos
            body_end = end
        pos = end + 1
    flush()
    return sections


def detect_tables(text: str) -> list[tuple[TableBlock, tuple[int, int]]]:
    """Locate every pipe-table and HTML-table region with its parsed grid."""
    out = []
    for block in _scan_blocks(text):
        if block.kind == "table":
            start, end = _trim_span(text, block.start, block.end)
            out.append((block.table, (start, end)))
    return out


def classify_table(table: TableBlock) -> TableComplexity:
    """Classify a table grid and store the result on ``table.complexity``.

    Complex means any of: more than one header row, any merged cell
    (row/col span > 1), or any row whose column coverage differs from the
    table's column count. Everything else is a regular single-header grid.
    """
    complexity = TableComplexity.NON_COMPLEX
    if table.header_row_count > 1:
        complexity = TableComplexity.COMPLEX
    else:
        for row in table.rows:
            if any(c.row_span > 1 or c.col_span > 1 for c in row):
                complexity = TableComplexity.COMPLEX
                break
            if sum(c.col_span for c in row) != table.col_count:
                complexity = TableComplexity.COMPLEX
                break
    table.complexity = complexity
    return complexity


def _split_oversized(
    text: str, spans: list[tuple[int, int]], limit: int
) -> list[tuple[int, int]]:
    """Greedily group block spans so each group slice stays under ``limit``."""
    groups: list[tuple[int, int]] = []
    group_start, group_end = spans[0]
    for start, end in spans[1:]:
        if end - group_start > limit:
            groups.append((group_start, group_end))
            group_start, group_end = start, end
        else:
            group_end = end
    groups.append((group_start, group_end))
    return groups


def parse_document(
    raw: str,
    *,
    doc_id: str,
    title: str,
    source_path: str = "",
    language: str = "en",
) -> tuple[DocumentSource, list[Segment]]:
    """Parse one markdown body into an ordered, non-overlapping segment list.

    Narrative segments start at each ATX heading (preamble gets an empty
    title); tables become their own segments; marker-only lines are paging
    metadata and sit between segments. Every non-whitespace character that
    is not a page marker ends up inside exactly one segment span.
    """
    if not raw.strip():
        raise EmptyDocument(f"document {doc_id!r} has no content")
    markers = _collect_markers(raw)
    marker_offsets = [m[0] for m in markers]

    def page_at(offset: int) -> int:
        idx = bisect.bisect_right(marker_offsets, offset) - 1
        return markers[idx][1] if idx >= 0 else 1

    segments: list[Segment] = []
    section_title = ""
    pending: list[tuple[int, int]] = []

    def emit(start: int, end: int, kind: SegmentKind, table: TableBlock | None):
        start, end = _trim_span(raw, start, end)
        if start >= end:
            return
        segments.append(
            Segment(
                segment_id=f"{doc_id}:{len(segments):04d}",
                doc_id=doc_id,
                section_title=section_title,
                page_start=page_at(start),
                page_end=page_at(end - 1),
                kind=kind,
                text=raw[start:end],
                char_span=(start, end),
                table=table,
            )
        )

    def flush_narrative():
        nonlocal pending
        if not pending:
            return
        start, end = pending[0][0], pending[-1][1]
        if end - start > MAX_NARRATIVE_CHARS:
            for group in _split_oversized(raw, pending, MAX_NARRATIVE_CHARS):
                emit(group[0], group[1], SegmentKind.NARRATIVE, None)
        else:
            emit(start, end, SegmentKind.NARRATIVE, None)
        pending = []

    for block in _scan_blocks(raw):
        if block.kind == "heading":
            flush_narrative()
            section_title = block.title
            pending = [(block.start, block.end)]
        elif block.kind == "marker":
            flush_narrative()
        elif block.kind == "table":
            flush_narrative()
            classify_table(block.table)
            emit(block.start, block.end, SegmentKind.TABLE, block.table)
        else:
            pending.append((block.start, block.end))
    flush_narrative()

    last_marker_page = markers[-1][1] if markers else 1
    page_count = max([last_marker_page] + [s.page_end for s in segments])
    source = DocumentSource(
        doc_id=doc_id,
        title=title,
        source_path=source_path,
        language=language,
        page_count=page_count,
    )
    return source, segments


# ---------------------------------------------------------------------------
# Corpus files
# ---------------------------------------------------------------------------

_REQUIRED_FRONT_MATTER = ("doc_id", "title", "source", "language")


def read_front_matter(text: str) -> tuple[dict, str]:
    """Split a corpus file into (front-matter dict, markdown body)."""
    if not text.startswith("---"):
        raise FrontMatterError("file does not start with a front-matter block")
    end = text.find("\n---", 3)
    if end < 0:
        raise FrontMatterError("front-matter block is not terminated")
    try:
        meta = yaml.safe_load(text[3:end])
    except yaml.YAMLError as exc:
        raise FrontMatterError(f"front matter is not valid YAML: {exc}") from exc
    if not isinstance(meta, dict):
        raise FrontMatterError("front matter must be a mapping")
    missing = [key for key in _REQUIRED_FRONT_MATTER if not meta.get(key)]
    if missing:
        raise FrontMatterError(f"front matter missing keys: {', '.join(missing)}")
    body = text[end + 4:]
    if body.startswith("\n"):
        body = body[1:]
    return meta, body


def load_corpus_file(path: Path) -> SegmentedDocument:
    meta, body = read_front_matter(path.read_text(encoding="utf-8"))
    source, segments = parse_document(
        body,
        doc_id=str(meta["doc_id"]),
        title=str(meta["title"]),
        source_path=str(meta["source"]),
        language=str(meta["language"]),
    )
    return SegmentedDocument(source, segments)


# Errors that mark one corpus file as bad without aborting ingestion.
PARSE_ERRORS = (EmptyDocument, MalformedPageMarker, UnclosedTable, FrontMatterError)


def load_corpus_dir(path: Path) -> tuple[list[SegmentedDocument], list[tuple[str, str]]]:
    """Ingest every ``.md`` file under ``path``.

    Returns the parsed documents plus (filename, message) pairs for files
    that failed to parse; a bad file never aborts the rest of the corpus.
    """
    documents = []
    failures = []
    for file in sorted(path.glob("*.md")):
        try:
            documents.append(load_corpus_file(file))
        except PARSE_ERRORS as exc:
            failures.append((file.name, str(exc)))
    return documents, failures


# ---------------------------------------------------------------------------
# Segment persistence (segments.jsonl + documents.json)
# ---------------------------------------------------------------------------

def _cell_to_dict(cell: Cell) -> dict:
    return {"text": cell.text, "row_span": cell.row_span, "col_span": cell.col_span}


def table_to_dict(table: TableBlock) -> dict:
    return {
        "rows": [[_cell_to_dict(c) for c in row] for row in table.rows],
        "header_row_count": table.header_row_count,
        "col_count": table.col_count,
        "complexity": table.complexity.value if table.complexity else None,
    }


def table_from_dict(data: dict) -> TableBlock:
    return TableBlock(
        rows=[[Cell(**c) for c in row] for row in data["rows"]],
        header_row_count=data["header_row_count"],
        col_count=data["col_count"],
        complexity=TableComplexity(data["complexity"]) if data.get("complexity") else None,
    )


def segment_to_dict(segment: Segment) -> dict:
    return {
        "segment_id": segment.segment_id,
        "doc_id": segment.doc_id,
        "section_title": segment.section_title,
        "page_start": segment.page_start,
        "page_end": segment.page_end,
        "kind": segment.kind.value,
        "text": segment.text,
        "char_span": list(segment.char_span),
        "table": table_to_dict(segment.table) if segment.table else None,
    }


def segment_from_dict(data: dict) -> Segment:
    return Segment(
        segment_id=data["segment_id"],
        doc_id=data["doc_id"],
        section_title=data["section_title"],
        page_start=data["page_start"],
        page_end=data["page_end"],
        kind=SegmentKind(data["kind"]),
        text=data["text"],
        char_span=tuple(data["char_span"]),
        table=table_from_dict(data["table"]) if data.get("table") else None,
    )


def write_segments(documents: list[SegmentedDocument], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "segments.jsonl").open("w", encoding="utf-8") as fh:
        for doc in documents:
            for segment in doc.segments:
                fh.write(json.dumps(segment_to_dict(segment), ensure_ascii=False) + "\n")
    docs = {
        doc.source.doc_id: {
            "doc_id": doc.source.doc_id,
            "title": doc.source.title,
            "source_path": doc.source.source_path,
            "language": doc.source.language,
            "page_count": doc.source.page_count,
        }
        for doc in documents
    }
    with (out_dir / "documents.json").open("w", encoding="utf-8") as fh:
        json.dump(docs, fh, ensure_ascii=False, indent=2)


def read_segments(out_dir: Path) -> list[SegmentedDocument]:
    with (out_dir / "documents.json").open(encoding="utf-8") as fh:
        doc_meta = json.load(fh)
    by_doc: dict[str, SegmentedDocument] = {
        doc_id: SegmentedDocument(DocumentSource(**meta)) for doc_id, meta in doc_meta.items()
    }
    with (out_dir / "segments.jsonl").open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                segment = segment_from_dict(json.loads(line))
                by_doc[segment.doc_id].segments.append(segment)
    return list(by_doc.values())
