"""Judge-model clients: prompts, verdict parsing, and an offline mock.

Each candidate passage is screened by a language model that returns three
fields: whether the passage is relevant to the question, whether it holds
evidence backing the supplementary statement, and a utility score in
[0, 1]. The screening can run against one chat endpoint (single mode) or
against a lightweight gate endpoint followed by a stronger scoring
endpoint (staged mode). A deterministic token-overlap mock supports fully
offline runs and tests.

Failed calls surface as errors; a passage never receives a fabricated
default verdict, so the audit trail only contains judgments a model
actually produced.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Protocol

import requests

from .errors import MalformedVerdict, ModelUnavailable
from .index import tokenize
from .ingest import Segment, format_page_range

PASSAGE_CHAR_BUDGET = 4000
MAX_ENDPOINT_RETRIES = 5

# Used only by the mock: relevance requires sharing a token with the query
# that is not one of these 50 words.
MOCK_STOPWORDS = frozenset(
    """
    a an and are as at be been but by can could did do does for from had has
    have how if in into is it its may might must no not of on or shall should
    such than that the their them then there this to was were what
    """.split()
)


@dataclass
class QueryStatement:
    """The question plus its supplementary financial-statement context."""

    query: str
    financial_statement: str = ""

    def __post_init__(self):
        if not self.query:
            raise ValueError("query must be non-empty")


@dataclass
class JudgeVerdict:
    segment_id: str
    relevant: bool
    supported: bool
    utility: float
    rationale: str = ""
    model_id: str = ""

    def __post_init__(self):
        if not 0.0 <= self.utility <= 1.0:
            raise ValueError(f"utility {self.utility} outside [0, 1]")


class EndpointRole(str, Enum):
    CONTROLLER = "controller"
    JUDGE = "judge"


@dataclass
class ModelEndpoint:
    base_url: str
    model_name: str
    role: EndpointRole = EndpointRole.JUDGE
    timeout: float = 60.0
    max_retries: int = 2
    temperature: float = 0.0

    def __post_init__(self):
        if not 0 <= self.max_retries <= MAX_ENDPOINT_RETRIES:
            raise ValueError(f"max_retries must be in [0, {MAX_ENDPOINT_RETRIES}]")


# ---------------------------------------------------------------------------
# Prompts
# ---------------------------------------------------------------------------

VERDICT_FORMAT = (
    'Answer with a single JSON object, nothing else:\n'
    '{"relevant": true|false, "supported": true|false, '
    '"utility": <number between 0.0 and 1.0>, "reason": "<one short sentence>"}'
)

GATE_FORMAT = (
    'Answer with a single JSON object, nothing else:\n'
    '{"relevant": true|false, "supported": true|false, "reason": "<one short sentence>"}'
)

UTILITY_FORMAT = (
    'Answer with a single JSON object, nothing else:\n'
    '{"utility": <number between 0.0 and 1.0>, "reason": "<one short sentence>"}'
)

_PREAMBLE = (
    "You screen passages from long financial documents for an analyst's "
    "question. Judge only the passage shown; do not assume facts from "
    "elsewhere in the document.\n"
    "- relevant: the passage addresses the question's subject.\n"
    "- supported: the passage contains concrete evidence (figures, table "
    "rows, named facts) that backs the supplementary statement; a passage "
    "that is not relevant cannot be supported.\n"
    "- utility: how useful the passage is for answering, from 0.0 (useless) "
    "to 1.0 (decisive)."
)


def _passage_block(p: Segment, doc_title: str) -> str:
    text = p.text
    if len(text) > PASSAGE_CHAR_BUDGET:
        text = text[:PASSAGE_CHAR_BUDGET] + f"\n[passage truncated at {PASSAGE_CHAR_BUDGET} characters]"
    section = p.section_title or "(document preamble)"
    return (
        f"Document: {doc_title}\n"
        f"Section: {section}\n"
        f"Pages: {format_page_range(p.page_start, p.page_end)}\n"
        f"Passage kind: {p.kind.value}\n"
        f"Passage:\n{text}"
    )


def build_judge_prompt(q: QueryStatement, p: Segment, *, doc_title: str = "") -> str:
    """Full three-field screening prompt; byte-identical for equal inputs."""
    return "\n\n".join(
        [
            _PREAMBLE,
            f"Question: {q.query}",
            f"Supplementary statement: {q.financial_statement or '(none provided)'}",
            _passage_block(p, doc_title),
            VERDICT_FORMAT,
        ]
    )


def build_gate_prompt(q: QueryStatement, p: Segment, *, doc_title: str = "") -> str:
    """Relevance/support-only prompt for the lightweight gate endpoint."""
    return "\n\n".join(
        [
            _PREAMBLE,
            f"Question: {q.query}",
            f"Supplementary statement: {q.financial_statement or '(none provided)'}",
            _passage_block(p, doc_title),
            "Judge only the relevant and supported fields.",
            GATE_FORMAT,
        ]
    )


def build_utility_prompt(q: QueryStatement, p: Segment, *, doc_title: str = "") -> str:
    """Utility-only prompt for the scoring endpoint in staged mode."""
    return "\n\n".join(
        [
            _PREAMBLE,
            f"Question: {q.query}",
            f"Supplementary statement: {q.financial_statement or '(none provided)'}",
            _passage_block(p, doc_title),
            "The passage already passed relevance and support screening. "
            "Judge only its utility.",
            UTILITY_FORMAT,
        ]
    )


# ---------------------------------------------------------------------------
# Verdict parsing
# ---------------------------------------------------------------------------

def _extract_object(raw: str, required: tuple[str, ...]) -> dict:
    """First JSON object in raw containing every required key.

    Tolerates surrounding prose and code fences by attempting a decode at
    each '{' position.
    """
    decoder = json.JSONDecoder()
    pos = raw.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(raw, pos)
        except ValueError:
            obj = None
        if isinstance(obj, dict) and all(key in obj for key in required):
            return obj
        pos = raw.find("{", pos + 1)
    raise MalformedVerdict(
        f"no object with fields {', '.join(required)} in model output: {raw[:200]!r}"
    )


def _clamp_utility(value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedVerdict(f"utility must be a number, got {value!r}")
    return min(max(float(value), 0.0), 1.0)


def _require_bool(obj: dict, key: str) -> bool:
    value = obj[key]
    if not isinstance(value, bool):
        raise MalformedVerdict(f"{key} must be a boolean, got {value!r}")
    return value


def parse_verdict(raw: str, segment_id: str, *, model_id: str = "") -> JudgeVerdict:
    """Extract the verdict object from model output; utility clamped to [0,1]."""
    obj = _extract_object(raw, ("relevant", "supported", "utility"))
    return JudgeVerdict(
        segment_id=segment_id,
        relevant=_require_bool(obj, "relevant"),
        supported=_require_bool(obj, "supported"),
        utility=_clamp_utility(obj["utility"]),
        rationale=str(obj.get("reason", "")),
        model_id=model_id,
    )


def render_verdict(v: JudgeVerdict) -> str:
    """Inverse of parse_verdict for the same segment_id and model_id."""
    return json.dumps(
        {
            "relevant": v.relevant,
            "supported": v.supported,
            "utility": v.utility,
            "reason": v.rationale,
        },
        ensure_ascii=False,
    )


# ---------------------------------------------------------------------------
# Clients
# ---------------------------------------------------------------------------

class JudgeClient(Protocol):
    model_id: str

    def judge(self, q: QueryStatement, p: Segment, *, doc_title: str = "") -> JudgeVerdict: ...


def mock_judge_verdict(q: QueryStatement, p: Segment) -> JudgeVerdict:
    """Deterministic offline stand-in for the judge model.

    relevant: the passage shares at least one non-stopword token with the
    query. supported: relevant, and the passage either contains a digit or
    shares a token with the financial statement. utility: Jaccard overlap
    between passage tokens and the combined query/statement tokens,
    rounded to 4 decimals.
    """
    passage_tokens = set(tokenize(p.text))
    query_tokens = set(tokenize(q.query))
    statement_tokens = set(tokenize(q.financial_statement))

    meaningful = (passage_tokens & query_tokens) - MOCK_STOPWORDS
    relevant = bool(meaningful)
    has_digit = any(ch.isdigit() for ch in p.text)
    supported = relevant and (has_digit or bool(passage_tokens & statement_tokens))

    reference = query_tokens | statement_tokens
    union = passage_tokens | reference
    utility = round(len(passage_tokens & reference) / len(union), 4) if union else 0.0

    if not relevant:
        rationale = "no query-term overlap"
    elif supported:
        evidence = "figures" if has_digit else "statement terms"
        rationale = f"shares query terms; contains {evidence}"
    else:
        rationale = "shares query terms but no corroborating evidence"
    return JudgeVerdict(
        segment_id=p.segment_id,
        relevant=relevant,
        supported=supported,
        utility=utility,
        rationale=rationale,
        model_id="mock",
    )


class MockJudgeClient:
    """Offline client wrapping :func:`mock_judge_verdict`."""

    model_id = "mock"

    def judge(self, q: QueryStatement, p: Segment, *, doc_title: str = "") -> JudgeVerdict:
        return mock_judge_verdict(q, p)


def _post_chat(
    endpoint: ModelEndpoint, prompt: str, session: requests.Session
) -> tuple[str | None, str]:
    """One chat-completion POST. Returns (content, error_description)."""
    payload = {
        "model": endpoint.model_name,
        "temperature": endpoint.temperature,
        "messages": [{"role": "user", "content": prompt}],
    }
    try:
        response = session.post(endpoint.base_url, json=payload, timeout=endpoint.timeout)
    except requests.RequestException as exc:
        return None, str(exc)
    if response.status_code != 200:
        return None, f"HTTP {response.status_code}"
    try:
        content = response.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        return None, f"malformed completion envelope: {exc}"
    if not isinstance(content, str):
        return None, "completion content is not text"
    return content, ""


def _call_with_retries(
    endpoint: ModelEndpoint,
    prompt: str,
    session: requests.Session,
    parse,
    response_format: str = VERDICT_FORMAT,
):
    """Shared retry loop: transport failures and unparseable replies both
    consume attempts; unparseable replies get a format reminder appended."""
    attempts = endpoint.max_retries + 1
    current_prompt = prompt
    last: Exception = ModelUnavailable(f"{endpoint.base_url}: no attempt made")
    for _ in range(attempts):
        content, error = _post_chat(endpoint, current_prompt, session)
        if content is None:
            last = ModelUnavailable(f"{endpoint.base_url}: {error}")
            continue
        try:
            return parse(content)
        except MalformedVerdict as exc:
            last = exc
            current_prompt = (
                prompt + "\n\nYour previous reply could not be parsed. " + response_format
            )
    raise last


class HttpJudgeClient:
    """Single-endpoint client: one chat call returns all three fields."""

    def __init__(self, endpoint: ModelEndpoint, session: requests.Session | None = None):
        self.endpoint = endpoint
        self.model_id = endpoint.model_name
        self._session = session or requests.Session()

    def judge(self, q: QueryStatement, p: Segment, *, doc_title: str = "") -> JudgeVerdict:
        prompt = build_judge_prompt(q, p, doc_title=doc_title)
        return _call_with_retries(
            self.endpoint,
            prompt,
            self._session,
            lambda raw: parse_verdict(raw, p.segment_id, model_id=self.model_id),
        )


class StagedJudgeClient:
    """Two-tier client: a gate endpoint decides relevant/supported, and a
    scoring endpoint is consulted for utility only when the gate passes.

    Gated-out passages never reach the scoring endpoint; they carry
    utility 0.0 and a rationale noting the skip.
    """

    def __init__(
        self,
        gate: ModelEndpoint,
        scorer: ModelEndpoint,
        session: requests.Session | None = None,
    ):
        self.gate = gate
        self.scorer = scorer
        self.model_id = f"{gate.model_name}+{scorer.model_name}"
        self._session = session or requests.Session()

    @staticmethod
    def _parse_gate(raw: str) -> tuple[bool, bool, str]:
        obj = _extract_object(raw, ("relevant", "supported"))
        return (
            _require_bool(obj, "relevant"),
            _require_bool(obj, "supported"),
            str(obj.get("reason", "")),
        )

    @staticmethod
    def _parse_utility(raw: str) -> tuple[float, str]:
        obj = _extract_object(raw, ("utility",))
        return _clamp_utility(obj["utility"]), str(obj.get("reason", ""))

    def judge(self, q: QueryStatement, p: Segment, *, doc_title: str = "") -> JudgeVerdict:
        relevant, supported, gate_reason = _call_with_retries(
            self.gate,
            build_gate_prompt(q, p, doc_title=doc_title),
            self._session,
            self._parse_gate,
            response_format=GATE_FORMAT,
        )
        if not (relevant and supported):
            return JudgeVerdict(
                segment_id=p.segment_id,
                relevant=relevant,
                supported=supported,
                utility=0.0,
                rationale=f"gate declined; utility scoring skipped. {gate_reason}".strip(),
                model_id=self.model_id,
            )
        utility, score_reason = _call_with_retries(
            self.scorer,
            build_utility_prompt(q, p, doc_title=doc_title),
            self._session,
            self._parse_utility,
            response_format=UTILITY_FORMAT,
        )
        return JudgeVerdict(
            segment_id=p.segment_id,
            relevant=True,
            supported=True,
            utility=utility,
            rationale=score_reason or gate_reason,
            model_id=self.model_id,
        )


def judge_passage(
    endpoint: ModelEndpoint | None,
    q: QueryStatement,
    p: Segment,
    *,
    doc_title: str = "",
    session: requests.Session | None = None,
) -> JudgeVerdict:
    """Judge one passage; ``endpoint=None`` selects the offline mock."""
    if endpoint is None:
        return mock_judge_verdict(q, p)
    return HttpJudgeClient(endpoint, session=session).judge(q, p, doc_title=doc_title)
