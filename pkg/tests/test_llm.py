import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from jitai_llm.exceptions import ConfigurationError, ParameterError, TransportError
from jitai_llm.llm import (
    DYNAMICS_SENTENCES,
    AuditLog,
    ChatClient,
    LLMClientConfig,
    PromptSpec,
    StateRow,
    Verdict,
    build_prompt,
    mock_oracle,
    parse_decision,
    prompt_hash,
    query_llm,
)

CORPUS = json.loads((Path(__file__).parent / "data" / "parser_corpus.json").read_text(encoding="utf-8"))

ROWS = tuple(
    StateRow(t=t, c=t % 2, h=0.05 * t, d=0.1 * t, reward=100.0 - t, action=t % 4) for t in range(6)
)


class TestBuildPrompt:
    def test_contains_preference_sentence(self):
        prompt = build_prompt(PromptSpec(preference="I twisted my ankle", state_rows=ROWS))
        assert 'The user preference is "I twisted my ankle".' in prompt

    def test_section_order(self):
        prompt = build_prompt(PromptSpec(preference="I am tired", state_rows=ROWS))
        anchors = [
            "A mobile health app can send a message to the user to encourage the user to walk.",
            *DYNAMICS_SENTENCES,
            "The user current state and previous data:",
            'The user preference is "I am tired".',
            "Should the mobile health app send a message to the user?",
        ]
        positions = [prompt.index(a) for a in anchors]
        assert positions == sorted(positions)

    def test_window_keeps_latest_rows(self):
        prompt = build_prompt(PromptSpec(preference="I am tired", state_rows=ROWS, history_window=4))
        assert prompt.count("day ") == 4
        assert "day 1:" not in prompt
        assert "day 2:" in prompt and "day 5:" in prompt

    def test_zero_window_has_no_rows_section(self):
        prompt = build_prompt(PromptSpec(preference="I am tired", state_rows=ROWS, history_window=0))
        assert "previous data" not in prompt
        assert "day " not in prompt

    def test_byte_identical(self):
        spec = PromptSpec(preference="I have a cold", state_rows=ROWS)
        assert build_prompt(spec).encode() == build_prompt(spec).encode()

    def test_row_rendering(self):
        row = StateRow(t=3, c=1, h=0.125, d=0.4, reward=150.1, action=3)
        assert row.render() == (
            "day 3: context=1, habituation=0.125, disengagement=0.400, reward=150.1, previous action=3"
        )

    def test_invalid_spec(self):
        with pytest.raises(ParameterError):
            PromptSpec(preference="")
        with pytest.raises(ParameterError):
            PromptSpec(preference="x", history_window=-1)


class TestParseDecision:
    @pytest.mark.parametrize("case", CORPUS, ids=lambda c: c["raw"][:30] or "<empty>")
    def test_corpus(self, case):
        assert parse_decision(case["raw"]).verdict.value == case["verdict"]

    def test_corpus_size(self):
        assert len(CORPUS) >= 20

    def test_reason_after_decision_token(self):
        d = parse_decision("not send. The user has a sore leg, indicating they cannot walk.")
        assert d.verdict is Verdict.NOT_SEND
        assert d.reason == "The user has a sore leg, indicating they cannot walk."
        d = parse_decision("Send — a tailored message could be helpful.")
        assert d.reason == "a tailored message could be helpful."
        assert parse_decision("SEND").reason is None
        assert parse_decision("maybe later").reason is None

    def test_raw_retained(self):
        raw = "  Not send!  "
        assert parse_decision(raw).raw == raw

    def test_huge_input(self):
        raw = ("lorem ipsum " * 300_000) + "do not send"
        assert parse_decision(raw).verdict is Verdict.NOT_SEND

    def test_none_input(self):
        assert parse_decision(None).verdict is Verdict.UNPARSEABLE

    @given(st.text())
    def test_total_function(self, raw):
        decision = parse_decision(raw)
        assert decision.verdict in Verdict
        assert decision.raw == raw


class TestMockOracle:
    def test_error_free(self, rng):
        assert all(mock_oracle("I am tired", 0.0, rng).verdict is Verdict.NOT_SEND for _ in range(500))

    def test_always_wrong(self, rng):
        assert all(mock_oracle("I am tired", 1.0, rng).verdict is Verdict.SEND for _ in range(500))

    def test_rate(self):
        rng = np.random.default_rng(8)
        n = 100_000
        sends = sum(mock_oracle("I am tired", 0.06, rng).verdict is Verdict.SEND for _ in range(n))
        assert abs(sends / n - 0.06) <= 0.005

    def test_raw_parses_to_same_verdict(self, rng):
        for rate in (0.0, 1.0):
            d = mock_oracle("I forgot my shoes", rate, rng)
            assert parse_decision(d.raw).verdict is d.verdict
            assert d.reason

    def test_contract(self, rng):
        with pytest.raises(ParameterError):
            mock_oracle(None, 0.1, rng)
        with pytest.raises(ParameterError):
            mock_oracle("I am tired", 1.5, rng)


def completion(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "sk-test")
    return "TEST_LLM_KEY"


def make_client(api_key, handler, **cfg_kwargs):
    cfg = LLMClientConfig(endpoint_url="http://stub/v1/chat/completions", api_key_env_var=api_key, **cfg_kwargs)
    http = httpx.Client(transport=httpx.MockTransport(handler))
    sleeps = []
    return ChatClient(cfg, http_client=http, sleep=sleeps.append), sleeps


class TestChatClient:
    def test_wire_format_and_echo(self, api_key):
        seen = {}

        def handler(request):
            seen["body"] = json.loads(request.content)
            seen["auth"] = request.headers["authorization"]
            return httpx.Response(200, json=completion("NOT SEND: user cannot walk"))

        client, _ = make_client(api_key, handler, model_name="gemma2-9b-it")
        assert client.complete("hello") == "NOT SEND: user cannot walk"
        assert seen["body"] == {
            "model": "gemma2-9b-it",
            "messages": [{"role": "user", "content": "hello"}],
            "temperature": 0.0,
        }
        assert seen["auth"] == "Bearer sk-test"
        assert client.calls == 1

    def test_server_errors_exhaust_retries(self, api_key):
        hits = []

        def handler(request):
            hits.append(1)
            return httpx.Response(500, text="boom")

        client, sleeps = make_client(api_key, handler, max_retries=3, backoff_base=0.5)
        with pytest.raises(TransportError) as info:
            client.complete("hi")
        assert len(hits) == 4
        assert info.value.status_code == 500
        assert info.value.attempts == 4
        assert sleeps == [0.5, 1.0, 2.0]

    def test_recovers_after_transient_failure(self, api_key):
        responses = iter([httpx.Response(503), httpx.Response(200, json=completion("send"))])
        client, sleeps = make_client(api_key, lambda request: next(responses))
        assert client.complete("hi") == "send"
        assert client.attempts == 2 and len(sleeps) == 1

    def test_connection_errors_are_retried(self, api_key):
        def handler(request):
            raise httpx.ConnectError("refused", request=request)

        client, _ = make_client(api_key, handler, max_retries=2)
        with pytest.raises(TransportError):
            client.complete("hi")
        assert client.attempts == 3

    def test_client_errors_not_retried(self, api_key):
        client, _ = make_client(api_key, lambda r: httpx.Response(401, text="bad key"), max_retries=3)
        with pytest.raises(TransportError) as info:
            client.complete("hi")
        assert info.value.status_code == 401
        assert client.attempts == 1

    def test_empty_body(self, api_key):
        client, _ = make_client(api_key, lambda r: httpx.Response(200, content=b""), max_retries=0)
        with pytest.raises(TransportError, match="empty"):
            client.complete("hi")

    def test_malformed_payload(self, api_key):
        client, _ = make_client(api_key, lambda r: httpx.Response(200, json={"oops": 1}), max_retries=0)
        with pytest.raises(TransportError, match="malformed"):
            client.complete("hi")

    def test_missing_key(self, monkeypatch):
        monkeypatch.delenv("NO_SUCH_KEY", raising=False)
        with pytest.raises(ConfigurationError):
            ChatClient(LLMClientConfig(api_key_env_var="NO_SUCH_KEY"))
        with pytest.raises(ConfigurationError):
            query_llm(LLMClientConfig(api_key_env_var="NO_SUCH_KEY"), "hi")

    def test_config_validation(self):
        with pytest.raises(ParameterError):
            LLMClientConfig(max_retries=-1)
        with pytest.raises(ParameterError):
            LLMClientConfig(timeout=0)


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if self.path == "/fail":
            self.send_response(500)
            self.end_headers()
            return
        payload = json.dumps(completion(body["messages"][0]["content"])).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def test_query_llm_against_http_stub(stub_server, api_key):
    cfg = LLMClientConfig(endpoint_url=stub_server + "/v1/chat/completions", api_key_env_var=api_key, timeout=5)
    assert query_llm(cfg, "NOT SEND: user cannot walk") == "NOT SEND: user cannot walk"


def test_query_llm_http_stub_failure(stub_server, api_key):
    cfg = LLMClientConfig(endpoint_url=stub_server + "/fail", api_key_env_var=api_key, max_retries=1, timeout=5)
    with pytest.raises(TransportError) as info:
        query_llm(cfg, "hi", sleep=lambda s: None)
    assert info.value.attempts == 2


def test_audit_log(tmp_path, rng):
    log = AuditLog(tmp_path / "sub" / "audit.jsonl")
    d1 = mock_oracle("I am tired", 0.0, rng)
    d2 = parse_decision("maybe")
    log.record(3, "prompt one", d1)
    log.record(4, "prompt two", d2)
    log.close()
    lines = [json.loads(x) for x in (tmp_path / "sub" / "audit.jsonl").read_text().splitlines()]
    assert [x["t"] for x in lines] == [3, 4]
    assert lines[0]["prompt_sha256"] == prompt_hash("prompt one")
    assert lines[0]["verdict"] == "not_send" and lines[1]["verdict"] == "unparseable"
    assert lines[1]["raw"] == "maybe"
