import json

import pytest
from hypothesis import given, strategies as st

from stub_llm import StubEndpoint, chat_ok, http_error
from utilrank.errors import MalformedVerdict, ModelUnavailable
from utilrank.judge import (
    GATE_FORMAT,
    MOCK_STOPWORDS,
    PASSAGE_CHAR_BUDGET,
    UTILITY_FORMAT,
    VERDICT_FORMAT,
    HttpJudgeClient,
    JudgeVerdict,
    MockJudgeClient,
    ModelEndpoint,
    QueryStatement,
    StagedJudgeClient,
    build_gate_prompt,
    build_judge_prompt,
    build_utility_prompt,
    judge_passage,
    mock_judge_verdict,
    parse_verdict,
    render_verdict,
)
from utilrank.ingest import Segment, SegmentKind


def seg(text: str, *, section: str = "Debt", segment_id: str = "doc:0000") -> Segment:
    return Segment(
        segment_id=segment_id,
        doc_id="doc",
        section_title=section,
        page_start=2,
        page_end=3,
        kind=SegmentKind.NARRATIVE,
        text=text,
        char_span=(0, len(text)),
    )


VERDICT_JSON = '{"relevant": true, "supported": true, "utility": 0.8, "reason": "ok"}'


class TestDataTypes:
    def test_stopword_list_has_fifty_entries(self):
        assert len(MOCK_STOPWORDS) == 50
        assert {"of", "is", "the", "what"} <= MOCK_STOPWORDS
        assert "total" not in MOCK_STOPWORDS

    def test_query_must_be_non_empty(self):
        with pytest.raises(ValueError):
            QueryStatement(query="")

    def test_statement_defaults_empty(self):
        assert QueryStatement(query="q").financial_statement == ""

    def test_utility_bounds_enforced(self):
        with pytest.raises(ValueError):
            JudgeVerdict("s", True, True, 1.2)
        with pytest.raises(ValueError):
            JudgeVerdict("s", True, True, -0.1)

    def test_endpoint_retry_budget_capped(self):
        with pytest.raises(ValueError):
            ModelEndpoint("http://x", "m", max_retries=6)
        with pytest.raises(ValueError):
            ModelEndpoint("http://x", "m", max_retries=-1)


class TestPrompts:
    Q = QueryStatement(query="what is total debt", financial_statement="debt 500")

    def test_prompt_is_deterministic(self):
        p = seg("Total borrowings of 500.")
        assert build_judge_prompt(self.Q, p, doc_title="FY24") == build_judge_prompt(
            self.Q, p, doc_title="FY24"
        )

    def test_prompt_carries_all_context(self):
        p = seg("Total borrowings of 500.")
        prompt = build_judge_prompt(self.Q, p, doc_title="FY24 Report")
        for expected in (
            "what is total debt",
            "debt 500",
            "FY24 Report",
            "Section: Debt",
            "Pages: 2-3",
            "Total borrowings of 500.",
            VERDICT_FORMAT,
        ):
            assert expected in prompt

    def test_missing_statement_is_flagged(self):
        q = QueryStatement(query="what is total debt")
        prompt = build_judge_prompt(q, seg("x y z"))
        assert "(none provided)" in prompt

    def test_empty_section_title_is_flagged(self):
        prompt = build_judge_prompt(self.Q, seg("x y z", section=""))
        assert "(document preamble)" in prompt

    def test_long_passage_truncated_with_notice(self):
        p = seg("y" * (PASSAGE_CHAR_BUDGET + 500))
        prompt = build_judge_prompt(self.Q, p)
        assert f"[passage truncated at {PASSAGE_CHAR_BUDGET} characters]" in prompt
        assert "y" * (PASSAGE_CHAR_BUDGET + 1) not in prompt

    def test_gate_and_utility_prompts_state_their_scope(self):
        p = seg("Total borrowings of 500.")
        gate = build_gate_prompt(self.Q, p)
        util = build_utility_prompt(self.Q, p)
        assert GATE_FORMAT in gate and "utility" not in GATE_FORMAT
        assert UTILITY_FORMAT in util
        assert "already passed" in util


class TestMockJudge:
    def test_frozen_overlap_example(self):
        # passage tokens {total, borrowings, of, 500}, reference {total, debt,
        # 500}: intersection 2, union 5, so utility is exactly 0.4.
        q = QueryStatement(query="total debt", financial_statement="debt 500")
        v = mock_judge_verdict(q, seg("total borrowings of 500"))
        assert (v.relevant, v.supported) == (True, True)
        assert v.utility == pytest.approx(0.4, abs=1e-12)
        assert v.model_id == "mock"

    def test_stopword_only_overlap_is_not_relevant(self):
        q = QueryStatement(query="what is the outlook")
        v = mock_judge_verdict(q, seg("the figure is 900"))
        assert v.relevant is False
        assert v.supported is False

    def test_relevant_without_evidence_is_unsupported(self):
        q = QueryStatement(query="dividend policy", financial_statement="payout 40")
        v = mock_judge_verdict(q, seg("dividend commentary without numbers"))
        assert v.relevant is True
        assert v.supported is False
        assert "no corroborating evidence" in v.rationale

    def test_statement_token_overlap_supports_without_digits(self):
        q = QueryStatement(query="cash position", financial_statement="strong liquidity")
        v = mock_judge_verdict(q, seg("cash remains strong"))
        assert v.supported is True
        assert "statement terms" in v.rationale

    def test_digit_supports_relevant_passage(self):
        q = QueryStatement(query="cash position", financial_statement="")
        v = mock_judge_verdict(q, seg("cash of 120"))
        assert v.supported is True
        assert "figures" in v.rationale

    def test_utility_rounded_to_four_decimals(self):
        q = QueryStatement(query="alpha")
        v = mock_judge_verdict(q, seg("alpha beta gamma"))
        # intersection 1, union 3: 1/3 rounds to 0.3333
        assert v.utility == 0.3333

    def test_mock_is_deterministic(self):
        q = QueryStatement(query="total debt", financial_statement="debt 500")
        p = seg("total borrowings of 500")
        assert mock_judge_verdict(q, p) == mock_judge_verdict(q, p)

    def test_client_wrapper_matches_function(self):
        q = QueryStatement(query="total debt")
        p = seg("total borrowings of 500")
        assert MockJudgeClient().judge(q, p) == mock_judge_verdict(q, p)

    def test_judge_passage_without_endpoint_uses_mock(self):
        q = QueryStatement(query="total debt")
        p = seg("total borrowings of 500")
        assert judge_passage(None, q, p) == mock_judge_verdict(q, p)


class TestParseVerdict:
    def test_plain_object(self):
        v = parse_verdict(VERDICT_JSON, "s:1", model_id="m")
        assert v == JudgeVerdict("s:1", True, True, 0.8, "ok", "m")

    def test_object_wrapped_in_prose_and_fences(self):
        raw = "Sure, here is my verdict:\n```json\n" + VERDICT_JSON + "\n```\nDone."
        v = parse_verdict(raw, "s:1")
        assert v.utility == 0.8

    def test_first_complete_object_wins(self):
        raw = "{\"broken\": } then " + VERDICT_JSON
        assert parse_verdict(raw, "s:1").relevant is True

    def test_utility_clamped_into_range(self):
        high = VERDICT_JSON.replace("0.8", "1.7")
        low = VERDICT_JSON.replace("0.8", "-0.2")
        assert parse_verdict(high, "s").utility == 1.0
        assert parse_verdict(low, "s").utility == 0.0

    def test_boolean_utility_rejected(self):
        raw = VERDICT_JSON.replace("0.8", "true")
        with pytest.raises(MalformedVerdict):
            parse_verdict(raw, "s")

    def test_non_boolean_flag_rejected(self):
        raw = VERDICT_JSON.replace('"relevant": true', '"relevant": "yes"')
        with pytest.raises(MalformedVerdict):
            parse_verdict(raw, "s")

    def test_missing_field_rejected(self):
        with pytest.raises(MalformedVerdict):
            parse_verdict('{"relevant": true, "supported": false}', "s")

    def test_no_object_at_all_rejected(self):
        with pytest.raises(MalformedVerdict):
            parse_verdict("relevant yes supported no", "s")

    def test_reason_defaults_to_empty(self):
        raw = '{"relevant": false, "supported": false, "utility": 0}'
        assert parse_verdict(raw, "s").rationale == ""

    @given(
        st.booleans(),
        st.booleans(),
        st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        st.text(
            alphabet=st.characters(blacklist_categories=("Cs",)), max_size=60
        ),
    )
    def test_render_parse_identity(self, relevant, supported, utility, reason):
        v = JudgeVerdict("s:0007", relevant, supported, utility, reason, "m")
        assert parse_verdict(render_verdict(v), "s:0007", model_id="m") == v


class TestHttpJudgeClient:
    Q = QueryStatement(query="total debt", financial_statement="debt 500")
    P = seg("total borrowings of 500")

    def endpoint(self, url, retries=2):
        return ModelEndpoint(url, "judge-model", max_retries=retries, timeout=5)

    def test_success_and_wire_shape(self):
        with StubEndpoint([chat_ok(VERDICT_JSON)]) as stub:
            client = HttpJudgeClient(self.endpoint(stub.url))
            v = client.judge(self.Q, self.P, doc_title="FY24")
        assert v.utility == 0.8
        assert v.model_id == "judge-model"
        request = stub.requests[0]
        assert request["model"] == "judge-model"
        assert request["temperature"] == 0
        assert [m["role"] for m in request["messages"]] == ["user"]
        assert "total borrowings of 500" in request["messages"][0]["content"]

    def test_malformed_reply_retried_with_reminder(self):
        with StubEndpoint([chat_ok("no json here"), chat_ok(VERDICT_JSON)]) as stub:
            v = HttpJudgeClient(self.endpoint(stub.url)).judge(self.Q, self.P)
        assert v.relevant is True
        assert len(stub.requests) == 2
        retry_prompt = stub.requests[1]["messages"][0]["content"]
        assert retry_prompt.startswith(stub.requests[0]["messages"][0]["content"])
        assert "could not be parsed" in retry_prompt
        assert retry_prompt.endswith(VERDICT_FORMAT)

    def test_transport_failure_retried(self):
        with StubEndpoint([http_error(503), chat_ok(VERDICT_JSON)]) as stub:
            v = HttpJudgeClient(self.endpoint(stub.url)).judge(self.Q, self.P)
        assert v.supported is True

    def test_exhausted_transport_raises_model_unavailable(self):
        with StubEndpoint([http_error(500)] * 2) as stub:
            client = HttpJudgeClient(self.endpoint(stub.url, retries=1))
            with pytest.raises(ModelUnavailable):
                client.judge(self.Q, self.P)
        assert len(stub.requests) == 2

    def test_exhausted_malformed_raises_malformed_verdict(self):
        with StubEndpoint([chat_ok("never json")] * 2) as stub:
            client = HttpJudgeClient(self.endpoint(stub.url, retries=1))
            with pytest.raises(MalformedVerdict):
                client.judge(self.Q, self.P)

    def test_connection_refused(self):
        client = HttpJudgeClient(
            ModelEndpoint("http://127.0.0.1:9/none", "m", max_retries=0, timeout=0.5)
        )
        with pytest.raises(ModelUnavailable):
            client.judge(self.Q, self.P)


class TestStagedJudgeClient:
    Q = QueryStatement(query="total debt", financial_statement="debt 500")
    P = seg("total borrowings of 500")
    GATE_PASS = '{"relevant": true, "supported": true, "reason": "on topic"}'
    GATE_FAIL = '{"relevant": true, "supported": false, "reason": "no figures"}'

    def endpoints(self, gate_url, scorer_url):
        return (
            ModelEndpoint(gate_url, "gate-model", max_retries=1, timeout=5),
            ModelEndpoint(scorer_url, "scorer-model", max_retries=1, timeout=5),
        )

    def test_gate_pass_consults_scorer(self):
        scorer_reply = '{"utility": 0.9, "reason": "decisive"}'
        with StubEndpoint([chat_ok(self.GATE_PASS)]) as gate_stub:
            with StubEndpoint([chat_ok(scorer_reply)]) as scorer_stub:
                gate, scorer = self.endpoints(gate_stub.url, scorer_stub.url)
                v = StagedJudgeClient(gate, scorer).judge(self.Q, self.P)
                assert len(scorer_stub.requests) == 1
                assert "already passed" in scorer_stub.requests[0]["messages"][0]["content"]
        assert v == JudgeVerdict(
            "doc:0000", True, True, 0.9, "decisive", "gate-model+scorer-model"
        )

    def test_gate_decline_skips_scorer(self):
        with StubEndpoint([chat_ok(self.GATE_FAIL)]) as gate_stub:
            with StubEndpoint([]) as scorer_stub:
                gate, scorer = self.endpoints(gate_stub.url, scorer_stub.url)
                v = StagedJudgeClient(gate, scorer).judge(self.Q, self.P)
                assert scorer_stub.requests == []
        assert (v.relevant, v.supported, v.utility) == (True, False, 0.0)
        assert "utility scoring skipped" in v.rationale

    def test_gate_retry_uses_gate_format_reminder(self):
        with StubEndpoint([chat_ok("garbage"), chat_ok(self.GATE_FAIL)]) as gate_stub:
            with StubEndpoint([]) as scorer_stub:
                gate, scorer = self.endpoints(gate_stub.url, scorer_stub.url)
                StagedJudgeClient(gate, scorer).judge(self.Q, self.P)
        assert gate_stub.requests[1]["messages"][0]["content"].endswith(GATE_FORMAT)

    def test_scorer_utility_clamped(self):
        with StubEndpoint([chat_ok(self.GATE_PASS)]) as gate_stub:
            with StubEndpoint([chat_ok('{"utility": 3.5}')]) as scorer_stub:
                gate, scorer = self.endpoints(gate_stub.url, scorer_stub.url)
                v = StagedJudgeClient(gate, scorer).judge(self.Q, self.P)
        assert v.utility == 1.0

    def test_gate_boolean_fields_validated_inside_retry(self):
        bad = '{"relevant": "yes", "supported": true}'
        with StubEndpoint([chat_ok(bad), chat_ok(self.GATE_FAIL)]) as gate_stub:
            with StubEndpoint([]) as scorer_stub:
                gate, scorer = self.endpoints(gate_stub.url, scorer_stub.url)
                v = StagedJudgeClient(gate, scorer).judge(self.Q, self.P)
        assert len(gate_stub.requests) == 2
        assert v.supported is False


class TestRenderVerdict:
    def test_renders_compact_json(self):
        v = JudgeVerdict("s", True, False, 0.25, "why", "m")
        data = json.loads(render_verdict(v))
        assert data == {
            "relevant": True,
            "supported": False,
            "utility": 0.25,
            "reason": "why",
        }
