import json
import socket
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from scenforge import dsl, llm
from scenforge.llm import (PLACEHOLDER, AuthError, EmptyCompletion, GatewayConfig, GatewayTimeout,
                           NetworkError, PromptTemplate, build_prompt, match_intent, query_remote)

DOC = "scenario fig1a\nseed 7\nenv rain\nego: forward speed=10\nagent a1: vehicle cut_in target=ego\n"


class Stub:
    """Local chat-completion endpoint with a scripted reply."""

    def __init__(self, status=200, content=DOC, delay=0.0):
        self.status, self.content, self.delay = status, content, delay
        self.requests = []
        stub = self

        class H(BaseHTTPRequestHandler):
            def do_POST(self):
                body = self.rfile.read(int(self.headers["Content-Length"]))
                stub.requests.append((self.path, dict(self.headers), json.loads(body)))
                time.sleep(stub.delay)
                out = json.dumps({"choices": [{"message": {"role": "assistant",
                                                           "content": stub.content}}]}).encode()
                try:
                    self.send_response(stub.status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(out)))
                    self.end_headers()
                    self.wfile.write(out)
                except (BrokenPipeError, ConnectionResetError):
                    pass

            def log_message(self, *a):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), H)
        self.url = f"http://127.0.0.1:{self.server.server_port}/v1"
        threading.Thread(target=self.server.serve_forever, daemon=True).start()

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def token(monkeypatch):
    monkeypatch.setenv("SCENFORGE_LLM_KEY", "secret")


def test_build_prompt_substitutes_once():
    tpl = PromptTemplate("lib", "before " + PLACEHOLDER + " after")
    out = build_prompt(tpl, "a car cuts in")
    assert out.count("a car cuts in") == 1
    assert out == "lib\n\nbefore a car cuts in after"
    assert len(out) == len("lib\n\n") + len(tpl.instruction) - len(PLACEHOLDER) + len("a car cuts in")


def test_build_prompt_single_pass_with_braces():
    q = "weird {USER QUERY} {x}"
    out = build_prompt(llm.DEFAULT_TEMPLATE, q)
    assert out.count(q) == 1
    assert out.endswith(q)


@pytest.mark.parametrize("instr", ["no placeholder", PLACEHOLDER + PLACEHOLDER])
def test_template_placeholder_count(instr):
    with pytest.raises(ValueError, match="exactly once"):
        PromptTemplate("p", instr)


def test_default_preamble_lists_library():
    for sig in dsl.registry():
        assert f"- {sig.name} [" in llm.DEFAULT_TEMPLATE.preamble


def test_config_validation():
    with pytest.raises(ValueError):
        GatewayConfig("http://x", timeout=0)
    with pytest.raises(ValueError):
        GatewayConfig("http://x", retries=-1)
    cfg = llm.config_from_env({"SCENFORGE_LLM_URL": "http://h", "SCENFORGE_LLM_MODEL": "m"})
    assert (cfg.base_url, cfg.model) == ("http://h", "m")
    with pytest.raises(AuthError):
        llm.config_from_env({})


def test_stub_echo_byte_identical(token):
    stub = Stub()
    try:
        cfg = GatewayConfig(stub.url, model="m1")
        out = query_remote(cfg, "the prompt")
        assert out == DOC
        path, headers, body = stub.requests[0]
        assert path == "/v1/chat/completions"
        assert headers["Authorization"] == "Bearer secret"
        assert body["model"] == "m1"
        assert body["messages"] == [{"role": "user", "content": "the prompt"}]
        assert query_remote(cfg, "the prompt") == out
        assert cfg == GatewayConfig(stub.url, model="m1")
    finally:
        stub.close()


def test_missing_token_fails_before_request(monkeypatch):
    monkeypatch.delenv("SCENFORGE_LLM_KEY", raising=False)
    stub = Stub()
    try:
        with pytest.raises(AuthError, match="SCENFORGE_LLM_KEY"):
            query_remote(GatewayConfig(stub.url), "p")
        assert stub.requests == []
    finally:
        stub.close()


def test_unreachable_url_after_retries(token):
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(NetworkError, match="after 3 attempts"):
        query_remote(GatewayConfig(f"http://127.0.0.1:{port}", retries=2, timeout=2), "p", backoff=0)


def test_auth_rejection_not_retried(token):
    stub = Stub(status=401)
    try:
        with pytest.raises(AuthError, match="401"):
            query_remote(GatewayConfig(stub.url, retries=3), "p", backoff=0)
        assert len(stub.requests) == 1
    finally:
        stub.close()


def test_server_error_retried(token):
    stub = Stub(status=500)
    try:
        with pytest.raises(NetworkError):
            query_remote(GatewayConfig(stub.url, retries=2), "p", backoff=0)
        assert len(stub.requests) == 3
    finally:
        stub.close()


def test_timeout(token):
    stub = Stub(delay=1.0)
    try:
        with pytest.raises(GatewayTimeout):
            query_remote(GatewayConfig(stub.url, retries=0, timeout=0.2), "p")
    finally:
        stub.close()


def test_empty_completion(token):
    stub = Stub(content="  \n")
    try:
        with pytest.raises(EmptyCompletion):
            query_remote(GatewayConfig(stub.url), "p")
    finally:
        stub.close()


def test_non_parsing_completion_is_a_parse_error(token, monkeypatch):
    from scenforge.pipeline import StageError, resolve_spec
    stub = Stub(content="this is not a scenario")
    monkeypatch.setenv("SCENFORGE_LLM_URL", stub.url)
    try:
        with pytest.raises(StageError) as ei:
            resolve_spec("anything", None, offline=False)
        assert ei.value.stage == "parse"
    finally:
        stub.close()


def functions(spec):
    return {spec.ego.function} | {a.call.function for a in spec.agents}


def test_showcase_prompts():
    s = match_intent("on a rainy day, there is a car cut in")
    assert [a.call.function for a in s.agents] == ["cut_in"] and s.environment == {"rain"}
    s = match_intent("a person crosses the road on a rainy day")
    assert [(a.category, a.call.function) for a in s.agents] == [("pedestrian", "pedestrian_cross")]
    assert s.environment == {"rain"}
    s = match_intent("the ego car changes lane during the daytime")
    assert s.ego.function.startswith("lane_change") and not s.agents
    assert s.environment == {"daytime"}


def test_matcher_total_deterministic_and_valid():
    queries = ["", "blah", "A car CUTS IN at night!", "two cars follow and a car overtakes",
               "the ego makes a u-turn", "a pedestrian walks, it is sunny", "ego brakes then stops"]
    for q in queries:
        s = match_intent(q)
        assert s == match_intent(q)
        assert dsl.parse(dsl.print_canonical(s)) == s
    unknown = match_intent("blah")
    assert unknown.ego.function == "forward" and not unknown.agents and unknown.warnings


def test_matcher_agent_ids_unique():
    s = match_intent("a car cuts in and another car overtakes while a person crosses the road")
    ids = [a.agent_id for a in s.agents]
    assert len(ids) == len(set(ids)) == 3
    assert functions(s) >= {"cut_in", "overtake", "pedestrian_cross"}
