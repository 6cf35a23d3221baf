import json
import threading
import time

import httpx
import pytest

from recollab.llm_client import (
    BadResponse,
    DimensionDrift,
    HttpError,
    LlmClient,
    LlmConfig,
    LlmError,
    MissingApiKey,
    Mode,
    ServiceUnavailable,
    Timeout,
)

ENV = {"OPENAI_API_KEY": "sk-test"}


def live(handler, env=ENV, **kw):
    cfg = LlmConfig(base_url="http://llm.test/v1", mode=Mode.LIVE, **kw)
    return LlmClient(cfg, transport=httpx.MockTransport(handler), sleep=lambda s: None, environ=env)


def chat_reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}]})


def test_chat_request_shape():
    seen = []

    def handler(request: httpx.Request) -> httpx.Response:
        seen.append(request)
        return chat_reply("hello")

    client = live(handler)
    assert client.chat("say hi") == "hello"
    req = seen[0]
    assert req.url.path == "/v1/chat/completions"
    assert req.headers["authorization"] == "Bearer sk-test"
    body = json.loads(req.content)
    assert body["temperature"] == 0
    assert body["model"] == "gpt-5"
    assert body["messages"] == [{"role": "user", "content": "say hi"}]


def test_missing_key_fails_before_network():
    calls = []

    def handler(request):
        calls.append(request)
        return chat_reply("x")

    client = live(handler, env={})
    with pytest.raises(MissingApiKey):
        client.chat("hi")
    assert calls == []


@pytest.mark.parametrize("retries", [0, 1, 3])
def test_retries_are_bounded_and_backoff_grows(retries):
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(503, text="busy")

    client = live(handler, max_retries=retries, backoff=0.5)
    with pytest.raises(HttpError) as err:
        client.chat("hi")
    assert err.value.status == 503
    assert len(calls) == retries + 1
    assert len(client.delays) == retries
    assert all(a <= b for a, b in zip(client.delays, client.delays[1:]))


def test_recovers_after_transient_failure():
    state = {"n": 0}

    def handler(request):
        state["n"] += 1
        if state["n"] == 1:
            raise httpx.ReadTimeout("slow", request=request)
        return chat_reply("ok")

    client = live(handler, max_retries=2)
    assert client.chat("hi") == "ok"
    assert state["n"] == 2


def test_timeout_after_retries():
    def handler(request):
        raise httpx.ConnectTimeout("down", request=request)

    client = live(handler, max_retries=1)
    with pytest.raises(Timeout):
        client.chat("hi")
    assert isinstance(Timeout("x"), ServiceUnavailable)


def test_unexpected_reply_shape():
    client = live(lambda r: httpx.Response(200, json={"nope": 1}), max_retries=0)
    with pytest.raises(BadResponse):
        client.chat("hi")


def test_in_flight_limit():
    lock = threading.Lock()
    state = {"now": 0, "peak": 0}

    def handler(request):
        with lock:
            state["now"] += 1
            state["peak"] = max(state["peak"], state["now"])
        time.sleep(0.02)
        with lock:
            state["now"] -= 1
        return chat_reply("ok")

    client = live(handler, max_in_flight=2)
    threads = [threading.Thread(target=client.chat, args=("hi",)) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert 1 <= state["peak"] <= 2


def test_embedding_dimension_is_pinned():
    dims = iter([3, 3, 4])

    def handler(request):
        assert request.url.path == "/v1/embeddings"
        body = json.loads(request.content)
        assert body["model"] == "text-embedding-3-large"
        return httpx.Response(200, json={"data": [{"embedding": [0.5] * next(dims)}]})

    client = live(handler)
    assert client.embed_remote("a").tolist() == [0.5, 0.5, 0.5]
    client.embed_remote("b")
    with pytest.raises(DimensionDrift):
        client.embed_remote("c")


def test_mock_mode_never_touches_the_network():
    calls = []

    def handler(request):
        calls.append(request)
        return chat_reply("x")

    client = LlmClient(LlmConfig(), responder=lambda p, c: p.upper(), transport=httpx.MockTransport(handler), environ={})
    assert client.chat("abc") == "ABC"
    assert client.chat("abc") == client.chat("abc")
    assert client.embed_remote("abc") is None
    assert calls == []


def test_mock_without_responder():
    with pytest.raises(LlmError):
        LlmClient().chat("hi")


def test_config_validation():
    with pytest.raises(ValueError):
        LlmConfig(timeout=0)
    with pytest.raises(ValueError):
        LlmConfig(max_retries=-1)
    with pytest.raises(ValueError):
        LlmConfig.from_mapping({"api_key": "sk-nope"})
    assert LlmConfig.from_mapping({"mode": "live"}).mode is Mode.LIVE
