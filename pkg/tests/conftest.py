import pytest
from hypothesis import HealthCheck, settings

from utilrank.index import HashEmbedder, IndexedCorpus
from utilrank.ingest import SegmentedDocument, parse_document

settings.register_profile(
    "default",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


SMALL_CORPUS = {
    "alpha": (
        "Alpha Holdings annual report",
        """# Debt profile

Total borrowings of 500 under the revolving facility.

<!-- page: 2 -->

# Liquidity

| Item | Amount |
| --- | --- |
| Cash | 120 |
| Undrawn lines | 80 |
""",
    ),
    "beta": (
        "Beta Industries interim statement",
        """# Overview

Commentary about seasonal logistics and staffing.

# Capital

<table>
  <tr><th rowspan="2">Item</th><th colspan="2">Reported</th></tr>
  <tr><th>Current</th><th>Prior</th></tr>
  <tr><td>Net debt</td><td>4,860</td><td>5,120</td></tr>
</table>
""",
    ),
}


def build_documents() -> list[SegmentedDocument]:
    documents = []
    for doc_id, (title, body) in SMALL_CORPUS.items():
        source, segments = parse_document(
            body, doc_id=doc_id, title=title, source_path=f"{doc_id}.md", language="en"
        )
        documents.append(SegmentedDocument(source, segments))
    return documents


@pytest.fixture()
def documents() -> list[SegmentedDocument]:
    return build_documents()


@pytest.fixture()
def indexed(documents) -> IndexedCorpus:
    return IndexedCorpus.build(documents, HashEmbedder())
