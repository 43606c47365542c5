import pytest
from fastapi.testclient import TestClient

from gsr.api import create_app
from gsr.clients import FunctionChatClient, terminal_echo_reader
from gsr.forge import RetrievalSample
from gsr.kg import Direction
from gsr.model import TrainingRun, build_vocab, init_model, train
from gsr.paths import DirectedHop

from test_model import tiny_config


@pytest.fixture(scope="module")
def client():
    from gsr.kg import ingest_triples
    from conftest import TOY_TSV
    g = ingest_triples(TOY_TSV)
    hop = lambda r: DirectedHop(r, Direction.FORWARD)
    sample = RetrievalSample("q", "where does a lead", "a", [(hop("r1"), hop("r2"))])
    vocab = build_vocab([], [sample], [label for _, label, _ in g.relation_catalog()])
    m, _ = train(init_model(tiny_config(), vocab), [], [sample],
                 TrainingRun(schedule="retrieval_only", epochs=300, batch_size=1, learning_rate=1e-2))
    return TestClient(create_app(g, m, FunctionChatClient(terminal_echo_reader)))


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok" and body["triples"] == 5


def test_retrieve(client):
    body = client.post("/retrieve", json={"question": "where does a lead", "topic_entities": ["a"],
                                          "k": 3, "n": 1}).json()
    assert body["terminals"] == ["c"]
    assert body["chains"][0] == {**body["chains"][0], "relations": ["r1", "r2"], "retained": True}


def test_retrieve_bad_topic(client):
    r = client.post("/retrieve", json={"question": "q", "topic_entities": ["nobody"]})
    assert r.status_code == 422
    assert client.post("/retrieve", json={"question": "q", "topic_entities": []}).status_code == 422


def test_serialize_and_answer(client):
    req = {"question": "where does a lead", "topic_entities": ["a"], "k": 3, "n": 1}
    paths = client.post("/serialize", json=req).json()
    assert paths["lines"] == ["a -> r1 -> b -> r2 -> c"]
    triples = client.post("/serialize", json={**req, "format": "triples"}).json()
    assert triples["lines"] == ["a, r1, b", "b, r2, c"]
    ans = client.post("/answer", json=req).json()
    assert ans["answers"] == ["c"]


def test_metrics_endpoints(client):
    r = client.post("/metrics/retrieval", json={"predicted": [["x", "y", "z"]], "gold": [["x"]]}).json()
    assert r == {"precision": 33.33, "recall": 100.0, "f1": 50.0}
    r = client.post("/metrics/e2e", json={"predicted": [["q", "x"]], "gold": [["x"]]}).json()
    assert r["hits_at_1"] == 0 and r["hits"] == 100.0
    assert client.post("/metrics/e2e", json={"predicted": [], "gold": []}).status_code == 422


def test_cli_query_is_thin_client(client, monkeypatch, capsys):
    import httpx
    from gsr import cli

    def fake_post(url, json, timeout):
        assert url == "http://svc/retrieve"
        return client.post("/retrieve", json=json)

    monkeypatch.setattr(httpx, "post", fake_post)
    assert cli.main(["query", "--server", "http://svc/", "--topic", "a", "where does a lead"]) == 0
    assert '"terminals"' in capsys.readouterr().out
