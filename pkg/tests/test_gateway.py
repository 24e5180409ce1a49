import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from opinionsum.gateway import (
    AuthError,
    CompletionRequest,
    DimensionMismatch,
    EmptyText,
    HttpGateway,
    MalformedPayload,
    ProviderConfig,
    ProviderUnavailable,
    complete_json,
    parse_json_payload,
)
from opinionsum.mock import MockGateway, UnscriptedPrompt, hash_embedding, prompt_hash

REQ = CompletionRequest("m", "system text", "user text")


# --- payload parsing ------------------------------------------------------------

@pytest.mark.parametrize(
    "raw",
    [
        '{"summary":"x"}',
        '```json\n{"summary":"x"}\n```',
        'Sure! Here it is:\n{"summary": "x"}\nHope that helps.',
        '{not json} then {"summary":"x"}',
    ],
)
def test_parse_json_payload(raw):
    assert parse_json_payload(raw) == {"summary": "x"}


def test_parse_json_payload_no_object():
    with pytest.raises(MalformedPayload) as e:
        parse_json_payload("no braces here")
    assert e.value.offset == len("no braces here")


def test_parse_json_payload_reports_offset():
    with pytest.raises(MalformedPayload) as e:
        parse_json_payload('ab {"summary": x}')
    assert e.value.offset == 15


def test_parse_json_payload_offset_counts_bytes():
    with pytest.raises(MalformedPayload) as e:
        parse_json_payload('é {"a": }')
    assert e.value.offset == 9  # 'é' is two bytes, the error sits at char 8


# --- mock provider ------------------------------------------------------------------

def test_mock_script_hit():
    g = MockGateway({prompt_hash(REQ): "scripted"}, strict=True)
    assert g.complete(REQ) == "scripted"


def test_mock_strict_miss():
    with pytest.raises(UnscriptedPrompt):
        MockGateway(strict=True).complete(REQ)


def test_mock_sequence_then_repeat_last():
    g = MockGateway(strict=True).script(REQ, ["a", "b"])
    assert [g.complete(REQ) for _ in range(4)] == ["a", "b", "b", "b"]


def test_mock_rule_on_substring():
    g = MockGateway(strict=True).when("user text", '{"ok": 1}')
    assert complete_json(g, REQ) == {"ok": 1}


def test_complete_json_reprompts_then_succeeds():
    g = MockGateway(strict=True).script(REQ, ["garbage", "still bad", '{"ok": true}'])
    g.max_retries = 3
    assert complete_json(g, REQ) == {"ok": True}
    assert len(g.calls) == 3


def test_complete_json_gives_up():
    g = MockGateway(strict=True).script(REQ, "garbage")
    g.max_retries = 2
    with pytest.raises(MalformedPayload):
        complete_json(g, REQ)
    assert len(g.calls) == 3


def test_embed_empty_text():
    with pytest.raises(EmptyText):
        MockGateway().embed_batch([""])
    with pytest.raises(EmptyText):
        MockGateway().embed_batch([])


def test_mock_embedding_identical_strings():
    v = MockGateway().embed_batch(["same text", "same text"])
    assert np.array_equal(v[0], v[1])


def test_mock_embedding_a_b():
    a, b = MockGateway().embed_batch(["a", "b"])
    assert abs(a @ a - 1.0) <= 1e-9
    assert -1.0 <= a @ b <= 1.0


def test_mock_embedding_matches_hashing_scheme():
    # independent recomputation of the bucket layout
    import hashlib

    v = np.zeros(32)
    for tok in ["the", "room", "the"]:
        v[int(hashlib.sha256(tok.encode()).hexdigest()[:16], 16) % 32] += 1
    v /= np.linalg.norm(v)
    assert np.allclose(hash_embedding("The room, the!"), v, atol=1e-12)


words = st.text(alphabet="abcdefgh ", min_size=1, max_size=15).filter(lambda s: s.strip())


@given(st.lists(words, min_size=1, max_size=6), st.lists(words, min_size=1, max_size=6))
def test_mock_embedding_segmentation_invariant(xs, ys):
    g = MockGateway()
    joint = g.embed_batch(xs + ys)
    assert np.array_equal(joint, np.vstack([g.embed_batch(xs), g.embed_batch(ys)]))
    assert np.allclose(np.linalg.norm(joint, axis=1), 1.0, atol=1e-9)


# --- live adapter over a fake transport -------------------------------------------------

def _gateway(handler, **cfg) -> HttpGateway:
    config = ProviderConfig(base_url="http://fake", **cfg)
    return HttpGateway(config, client=httpx.Client(transport=httpx.MockTransport(handler)), sleep=lambda s: None)


def test_transient_failures_then_success(caplog):
    calls = []

    def handler(request: httpx.Request) -> httpx.Response:
        calls.append(json.loads(request.content))
        if len(calls) < 3:
            return httpx.Response(503)
        return httpx.Response(200, json={"text": "fine"})

    with caplog.at_level(logging.INFO, logger="opinionsum.gateway"):
        assert _gateway(handler, max_retries=3).complete(REQ) == "fine"
    attempts = [r for r in caplog.records if r.getMessage().startswith("POST /chat attempt")]
    assert len(attempts) == 3
    assert calls[0] == {"model": "m", "system": "system text", "user": "user text", "temperature": 0.0, "max_tokens": 1024, "seed": None}


def test_retries_exhausted():
    g = _gateway(lambda r: httpx.Response(502), max_retries=2)
    with pytest.raises(ProviderUnavailable):
        g.complete(REQ)


def test_transport_error_is_transient():
    n = {"i": 0}

    def handler(request):
        n["i"] += 1
        if n["i"] == 1:
            raise httpx.ConnectError("refused")
        return httpx.Response(200, json={"text": "ok"})

    assert _gateway(handler).complete(REQ) == "ok"


def test_auth_error_not_retried():
    n = {"i": 0}

    def handler(request):
        n["i"] += 1
        return httpx.Response(401)

    with pytest.raises(AuthError):
        _gateway(handler).complete(REQ)
    assert n["i"] == 1


def test_bearer_token_from_env(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"text": "ok"})

    monkeypatch.setenv("MY_KEY", "sekrit")
    _gateway(handler, api_key_env_var="MY_KEY").complete(REQ)
    assert seen["auth"] == "Bearer sekrit"


def test_embed_wire_and_normalization():
    def handler(request):
        body = json.loads(request.content)
        assert request.url.path == "/embed"
        assert body == {"model": "all-MiniLM-L6-v2", "inputs": ["a", "b"]}
        return httpx.Response(200, json={"vectors": [[3, 4], [0, 2]]})

    v = _gateway(handler).embed_batch(["a", "b"])
    assert np.allclose(v, [[0.6, 0.8], [0.0, 1.0]])


def test_embed_dimension_mismatch():
    g = _gateway(lambda r: httpx.Response(200, json={"vectors": [[1, 0], [1, 0, 0]]}))
    with pytest.raises(DimensionMismatch):
        g.embed_batch(["a", "b"])


def test_in_flight_requests_bounded():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def handler(request):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.01)
        with lock:
            state["now"] -= 1
        return httpx.Response(200, json={"text": "ok"})

    g = _gateway(handler, max_parallel=2)
    with ThreadPoolExecutor(8) as pool:
        assert list(pool.map(lambda _: g.complete(REQ), range(24))) == ["ok"] * 24
    assert state["peak"] <= 2


def test_request_validation():
    with pytest.raises(ValueError):
        CompletionRequest("m", "", "user")
    with pytest.raises(ValueError):
        CompletionRequest("m", "s", "u", temperature=-1)
    with pytest.raises(ValueError):
        ProviderConfig(max_parallel=0)
