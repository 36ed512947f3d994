import json

import httpx
import pytest

from logitest.errors import GatewayError, ScriptExhausted
from logitest.llm import (
    ChatMessage,
    CompletionRequest,
    EmbeddingBatch,
    MockCompletionProvider,
    MockEmbeddingProvider,
    OpenAICompatibleClient,
    route_key,
)
from logitest.relationship_graph import cosine_similarity


def request(route="executor#1", user="hello"):
    return CompletionRequest("m", [ChatMessage("system", f"You help. [route: {route}]"),
                                   ChatMessage("user", user)])


def chat_reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": text}}],
                                     "usage": {"prompt_tokens": 3, "completion_tokens": 1}})


def client_with(handler, **kw):
    sleeps = []
    client = OpenAICompatibleClient("http://llm.test/v1", api_key="k",
                                    transport=httpx.MockTransport(handler), sleep=sleeps.append, **kw)
    return client, sleeps


class TestOpenAICompatibleClient:
    def test_retries_server_errors(self):
        statuses = iter([500, 500])

        def handler(req):
            code = next(statuses, None)
            return httpx.Response(code) if code else chat_reply("ok")

        client, sleeps = client_with(handler)
        assert client.complete(request()) == "ok"
        assert client.retry_count == 2
        assert sleeps == [1.0, 2.0]

    def test_unreachable_gives_up_after_four_attempts(self):
        attempts = []

        def handler(req):
            attempts.append(req)
            raise httpx.ConnectError("refused")

        client, sleeps = client_with(handler)
        with pytest.raises(GatewayError, match="4 attempts"):
            client.complete(request())
        assert len(attempts) == 4 and sleeps == [1.0, 2.0, 4.0]

    @pytest.mark.parametrize("code", [401, 403])
    def test_auth_failure_not_retried(self, code):
        attempts = []

        def handler(req):
            attempts.append(req)
            return httpx.Response(code)

        client, _ = client_with(handler)
        with pytest.raises(GatewayError, match="authentication"):
            client.complete(request())
        assert len(attempts) == 1

    def test_rate_limit_retried(self):
        pending = [429]

        def handler(req):
            return httpx.Response(pending.pop()) if pending else chat_reply("fine")

        client, _ = client_with(handler)
        assert client.complete(request()) == "fine" and client.retry_count == 1

    def test_wire_payload_and_content_untouched(self):
        seen = {}
        text = "```json\n{\"a\": 1}\n```\n  trailing  "

        def handler(req):
            seen["auth"] = req.headers["authorization"]
            seen["body"] = json.loads(req.content)
            seen["url"] = str(req.url)
            return chat_reply(text)

        client, _ = client_with(handler)
        req = CompletionRequest("gpt-x", request().messages, temperature=0.2, max_output=50)
        assert client.complete(req) == text
        assert seen["url"] == "http://llm.test/v1/chat/completions"
        assert seen["auth"] == "Bearer k"
        assert seen["body"]["model"] == "gpt-x" and seen["body"]["temperature"] == 0.2
        assert seen["body"]["max_tokens"] == 50
        assert [m["role"] for m in seen["body"]["messages"]] == ["system", "user"]

    def test_malformed_reply(self):
        client, _ = client_with(lambda req: httpx.Response(200, json={"choices": []}))
        with pytest.raises(GatewayError):
            client.complete(request())

    def test_embeddings_sorted_by_index(self):
        def handler(req):
            assert str(req.url) == "http://emb.test/embeddings"
            return httpx.Response(200, json={"data": [{"index": 1, "embedding": [0, 1]},
                                                      {"index": 0, "embedding": [1, 0]}]})

        client, _ = client_with(handler, embedding_base_url="http://emb.test")
        assert client.embed(EmbeddingBatch("e", ["a", "b"])) == [[1.0, 0.0], [0.0, 1.0]]

    def test_embedding_shape_checked(self):
        client, _ = client_with(lambda req: httpx.Response(200, json={"data": [{"embedding": [1]}]}))
        with pytest.raises(GatewayError):
            client.embed(EmbeddingBatch("e", ["a", "b"]))

    def test_from_env(self, monkeypatch):
        monkeypatch.setenv("LLM_BASE_URL", "http://x.test/v1/")
        monkeypatch.delenv("EMBEDDING_BASE_URL", raising=False)
        client = OpenAICompatibleClient.from_env("m", "e")
        assert client.base_url == "http://x.test/v1" == client.embedding_base_url


class TestRequestTypes:
    def test_first_message_must_be_system(self):
        with pytest.raises(ValueError):
            CompletionRequest("m", [ChatMessage("user", "hi")])
        with pytest.raises(ValueError):
            CompletionRequest("m", [])

    def test_message_validation(self):
        with pytest.raises(ValueError):
            ChatMessage("tool", "x")
        with pytest.raises(ValueError):
            ChatMessage("user", "")
        assert ChatMessage("assistant", "").content == ""

    def test_route_key(self):
        assert route_key(request("validator#2")) == "validator#2"
        assert route_key(CompletionRequest("m", [ChatMessage("system", "plain")])) is None


class TestMockCompletionProvider:
    def test_consumes_in_order_then_exhausts(self):
        mock = MockCompletionProvider({"executor#1": ["a", "b"]})
        assert [mock.complete(request()), mock.complete(request())] == ["a", "b"]
        with pytest.raises(ScriptExhausted):
            mock.complete(request())
        assert issubclass(ScriptExhausted, GatewayError)

    def test_keys_interleave_independently(self):
        mock = MockCompletionProvider({"executor#1": ["e1", "e2"], "validator#1": ["v1", "v2"]})
        got = [mock.complete(request(r)) for r in
               ("executor#1", "validator#1", "executor#1", "validator#1")]
        assert got == ["e1", "v1", "e2", "v2"]
        assert [key for key, _ in mock.calls] == ["executor#1", "validator#1"] * 2

    def test_fallback_and_missing_keys(self):
        mock = MockCompletionProvider({}, fallback={"judge": "RELATED"})
        assert mock.complete(request("judge#1")) == mock.complete(request("judge#2")) == "RELATED"
        with pytest.raises(ScriptExhausted):
            mock.complete(request("validator#1"))

    def test_requires_route_tag(self):
        with pytest.raises(GatewayError):
            MockCompletionProvider({}).complete(CompletionRequest("m", [ChatMessage("system", "x")]))

    def test_from_file_formats(self, tmp_path):
        bare = tmp_path / "bare.json"
        bare.write_text(json.dumps({"judge#1": ["RELATED"]}))
        full = tmp_path / "full.json"
        full.write_text(json.dumps({"replies": {}, "fallback": {"judge": "UNRELATED"}}))
        assert MockCompletionProvider.from_file(str(bare)).complete(request("judge#1")) == "RELATED"
        assert MockCompletionProvider.from_file(str(full)).complete(request("judge#9")) == "UNRELATED"

    def test_prompts_for(self):
        mock = MockCompletionProvider({}, fallback={"judge": "RELATED", "executor": "x"})
        mock.complete(request("judge#1"))
        mock.complete(request("executor#1", user="build it"))
        assert [r.messages[1].content for r in mock.prompts_for("executor")] == ["build it"]


class TestMockEmbeddingProvider:
    def test_unit_norm_and_deterministic(self):
        emb = MockEmbeddingProvider()
        vec = emb.vector("Add a new pet to the store")
        assert len(vec) == 16
        assert abs(sum(x * x for x in vec) - 1.0) < 1e-12
        assert emb.vector("Add a new pet to the store") == vec

    def test_disjoint_vocabulary_is_orthogonal(self):
        emb = MockEmbeddingProvider()
        a, b = emb.embed(EmbeddingBatch("e", ["add pet", "delete order"]))
        assert cosine_similarity(a, b) == 0.0
        assert cosine_similarity(a, emb.vector("pet add")) == pytest.approx(1.0)

    def test_empty_text_still_embeds(self):
        assert sum(MockEmbeddingProvider().vector("")) > 0
