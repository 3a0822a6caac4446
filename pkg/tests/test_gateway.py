import pytest

from flowsmith.gateway import (
    CassetteStore,
    ChatMessage,
    ChatRequest,
    ChatResponse,
    GatewayTimeout,
    LLMGateway,
    ProviderError,
    ReplayMiss,
    ScriptedTransport,
    StructuredOutputFailure,
    closed_object_schema,
    parse_json_block,
    request_digest,
)


def req(content="hello", temperature=0.3, schema=None):
    return ChatRequest(
        provider="mock",
        model="m1",
        messages=(ChatMessage("user", content),),
        temperature=temperature,
        response_schema=schema,
    )


def test_mock_echo_script():
    gateway = LLMGateway(mode="mock", transport=ScriptedTransport([lambda r: r.messages[-1].content]))
    assert gateway.complete(req("echo me")).text == "echo me"


def test_script_queue_order():
    gateway = LLMGateway(mode="mock", transport=ScriptedTransport(["one", "two"]))
    assert gateway.complete(req()).text == "one"
    assert gateway.complete(req()).text == "two"


def test_empty_messages_rejected():
    gateway = LLMGateway(mode="mock", transport=ScriptedTransport(["x"]))
    with pytest.raises(ValueError):
        gateway.complete(ChatRequest(provider="p", model="m", messages=()))


def test_digest_stable_under_reconstruction():
    a = req("same content")
    b = ChatRequest(
        provider="mock",
        model="m1",
        messages=tuple([ChatMessage(role="user", content="same " + "content")]),
        temperature=0.3,
    )
    assert request_digest(a) == request_digest(b)


def test_digest_sensitive_to_semantics():
    assert request_digest(req("a")) != request_digest(req("b"))
    assert request_digest(req(temperature=0.1)) != request_digest(req(temperature=0.2))
    schema = closed_object_schema({"x": {"type": "string"}})
    assert request_digest(req(schema=schema)) != request_digest(req())


def test_record_then_replay_identical(tmp_path):
    store = CassetteStore(tmp_path, session="s1")
    recorder = LLMGateway(mode="record", transport=ScriptedTransport(["recorded reply"]), cassettes=store)
    recorded = recorder.complete(req("question"))

    replayer = LLMGateway(mode="replay", cassettes=CassetteStore(tmp_path))
    replayed1 = replayer.complete(req("question"))
    replayed2 = replayer.complete(req("question"))
    assert replayed1 == recorded
    assert replayed1 == replayed2


def test_replay_makes_zero_transport_calls(tmp_path):
    store = CassetteStore(tmp_path, session="s1")
    LLMGateway(mode="record", transport=ScriptedTransport(["x"]), cassettes=store).complete(req())
    transport = ScriptedTransport(["should never be used"])
    replayer = LLMGateway(mode="replay", transport=transport, cassettes=CassetteStore(tmp_path))
    replayer.complete(req())
    assert replayer.transport_calls == 0
    assert transport.requests == []


def test_replay_miss(tmp_path):
    gateway = LLMGateway(mode="replay", cassettes=CassetteStore(tmp_path))
    with pytest.raises(ReplayMiss):
        gateway.complete(req("never recorded"))


def test_cassette_files_human_readable(tmp_path):
    store = CassetteStore(tmp_path, session="demo")
    LLMGateway(mode="record", transport=ScriptedTransport(["visible text"]), cassettes=store).complete(req())
    content = (tmp_path / "demo.json").read_text()
    assert "visible text" in content
    assert "key" in content


def test_retry_exhaustion_propagates_provider_error():
    transport = ScriptedTransport(
        [ProviderError(500, "boom"), ProviderError(500, "boom"), ProviderError(500, "boom")]
    )
    gateway = LLMGateway(mode="mock", transport=transport, retry_backoffs=(0.0, 0.0))
    with pytest.raises(ProviderError):
        gateway.complete(req())
    assert gateway.transport_calls == 3


def test_retry_then_success():
    transport = ScriptedTransport([GatewayTimeout("slow"), "finally"])
    gateway = LLMGateway(mode="mock", transport=transport, retry_backoffs=(0.0, 0.0))
    assert gateway.complete(req()).text == "finally"


def test_client_error_not_retried():
    transport = ScriptedTransport([ProviderError(400, "bad request"), "unused"])
    gateway = LLMGateway(mode="mock", transport=transport, retry_backoffs=(0.0,))
    with pytest.raises(ProviderError):
        gateway.complete(req())
    assert gateway.transport_calls == 1


# ---------------------------------------------------------------------------
# structured output


SCHEMA = closed_object_schema({"name": {"type": "string"}, "n": {"type": "integer"}})


def test_structured_happy_path_one_attempt():
    gateway = LLMGateway(mode="mock", transport=ScriptedTransport(['{"name": "a", "n": 1}']))
    result = gateway.complete_structured(req(), SCHEMA, max_attempts=2)
    assert result.value == {"name": "a", "n": 1}
    assert result.attempts == 1


def test_structured_recovers_on_second_attempt():
    transport = ScriptedTransport(["not even json", '{"name": "a", "n": 2}'])
    gateway = LLMGateway(mode="mock", transport=transport)
    result = gateway.complete_structured(req(), SCHEMA, max_attempts=2)
    assert result.value["n"] == 2
    assert result.attempts == 2
    # the corrective turn carries the validation error back to the model
    second_request = transport.requests[1]
    assert any("not valid" in m.content.lower() for m in second_request.messages)


def test_structured_failure_carries_raw_attempts():
    transport = ScriptedTransport(["bad one", "bad two"])
    gateway = LLMGateway(mode="mock", transport=transport)
    with pytest.raises(StructuredOutputFailure) as exc:
        gateway.complete_structured(req(), SCHEMA, max_attempts=2)
    assert exc.value.raw_attempts == ["bad one", "bad two"]


def test_structured_rejects_open_schema():
    gateway = LLMGateway(mode="mock", transport=ScriptedTransport(["{}"]))
    with pytest.raises(ValueError):
        gateway.complete_structured(req(), {"type": "object"})


def test_structured_rejects_extra_keys():
    transport = ScriptedTransport(['{"name": "a", "n": 1, "extra": true}', '{"name": "a", "n": 1}'])
    gateway = LLMGateway(mode="mock", transport=transport)
    result = gateway.complete_structured(req(), SCHEMA, max_attempts=2)
    assert result.attempts == 2


def test_parse_json_block_tolerates_fences():
    assert parse_json_block('```json\n{"a": 1}\n```') == {"a": 1}
    assert parse_json_block('Here you go: {"a": 1} hope that helps') == {"a": 1}
    with pytest.raises(ValueError):
        parse_json_block("no json here")


def test_gateway_never_leaks_provider_shapes():
    gateway = LLMGateway(mode="mock", transport=ScriptedTransport(["plain"]))
    response = gateway.complete(req())
    assert isinstance(response, ChatResponse)
    assert set(vars(response)) == {"text", "finish_reason", "input_tokens", "output_tokens", "latency_ms"}
