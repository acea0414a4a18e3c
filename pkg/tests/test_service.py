import threading

import numpy as np
import pytest

from core.errors import BudgetExhaustedError, PreconditionError, ServiceRequestError
from core.nn import forward, init_model
from server import create_app, serve
from service.client import ServiceClient
from service.ledger import QueryLedger
from service.target import ServiceConfig

WIDTH = 6


@pytest.fixture
def model():
    return init_model([WIDTH, 8, 3], seed=0)


def make_client(model, **config):
    app = create_app(ServiceConfig(artifact_path="in-memory", **config), model=model)
    return app, app.test_client()


def rows(n, width=WIDTH):
    return np.random.default_rng(n).normal(size=(n, width)).tolist()


# ===== Ledger =====

def test_ledger_refuses_a_batch_that_does_not_fit():
    ledger = QueryLedger(10)
    assert ledger.admit(7)
    assert not ledger.admit(4)
    assert ledger.used == 7
    assert ledger.admit(3, "embedding")
    assert ledger.remaining == 0
    assert ledger.snapshot()["per_endpoint"] == {"predict": 7, "embedding": 3}


def test_ledger_rejects_bad_arguments():
    with pytest.raises(PreconditionError):
        QueryLedger(0)
    with pytest.raises(PreconditionError):
        QueryLedger(5).admit(0)


def test_unlimited_ledger_never_refuses():
    ledger = QueryLedger()
    assert all(ledger.admit(1000) for _ in range(10))
    assert ledger.remaining is None
    assert ledger.used == 10000


def test_ledger_is_never_overdrawn_by_concurrent_callers():
    ledger = QueryLedger(3000)
    admitted = []

    def worker(seed):
        sizes = np.random.default_rng(seed).integers(1, 40, size=200)
        admitted.append(sum(int(n) for n in sizes if ledger.admit(int(n))))

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert ledger.used <= 3000
    assert sum(admitted) == ledger.used
    ledger_full = QueryLedger(3000)
    assert ledger_full.admit(3000)
    assert not ledger_full.admit(1)


# ===== HTTP surface =====

def test_predict_returns_posteriors(model):
    _, client = make_client(model)
    x = rows(4)
    resp = client.post("/predict", json={"inputs": x})
    assert resp.status_code == 200
    posteriors = np.asarray(resp.get_json()["posteriors"])
    np.testing.assert_allclose(posteriors, forward(model, np.asarray(x)).posteriors)
    assert "remaining_budget" not in resp.get_json()


def test_wrong_width_is_a_dimension_mismatch(model):
    _, client = make_client(model)
    resp = client.post("/predict", json={"inputs": rows(2, WIDTH + 1)})
    assert resp.status_code == 400
    assert resp.get_json()["error"] == "dimension_mismatch"


@pytest.mark.parametrize("body", [None, {}, {"inputs": []}, {"inputs": [1.0, 2.0]}, {"inputs": [["a"] * WIDTH]}])
def test_malformed_bodies_are_bad_requests(model, body):
    _, client = make_client(model)
    resp = client.post("/predict", json=body) if body is not None else client.post("/predict", data="nope")
    assert resp.status_code == 400
    assert resp.get_json()["error"] == "bad_request"


def test_refused_requests_do_not_consume_budget(model):
    app, client = make_client(model, query_budget=5)
    client.post("/predict", json={"inputs": rows(2, WIDTH + 1)})
    assert app.config["ledger"].used == 0


def test_budget_exhaustion_answers_429(model):
    app, client = make_client(model, query_budget=300)
    for _ in range(3):
        assert client.post("/predict", json={"inputs": rows(100)}).status_code == 200
    resp = client.post("/predict", json={"inputs": rows(1)})
    assert resp.status_code == 429
    assert resp.get_json() == {"error": "budget_exhausted", "message": resp.get_json()["message"], "remaining_budget": 0}
    assert app.config["ledger"].used == 300


def test_embedding_endpoint_shares_the_ledger(model):
    app, client = make_client(model, query_budget=10, expose_embedding=True)
    resp = client.post("/embedding", json={"inputs": rows(4)})
    assert resp.status_code == 200
    assert np.asarray(resp.get_json()["embeddings"]).shape == (4, 8)
    assert resp.get_json()["remaining_budget"] == 6
    client.post("/predict", json={"inputs": rows(6)})
    assert app.config["ledger"].remaining == 0


def test_hidden_embedding_endpoint_is_not_found(model):
    _, client = make_client(model)
    assert client.post("/embedding", json={"inputs": rows(1)}).status_code == 404


def test_embedding_needs_a_hidden_layer():
    with pytest.raises(PreconditionError):
        create_app(ServiceConfig(artifact_path="in-memory", expose_embedding=True), model=init_model([WIDTH, 3], 0))


def test_oversized_batches_are_refused(model):
    _, client = make_client(model, max_batch_rows=4)
    assert client.post("/predict", json={"inputs": rows(5)}).status_code == 400


# ===== Client against a live service =====

@pytest.fixture
def live(model):
    handle = serve(ServiceConfig(artifact_path="in-memory", query_budget=250, max_batch_rows=100,
                                 expose_embedding=True), model=model)
    yield handle
    handle.shutdown()


def test_client_chunks_and_counts(live, model):
    client = ServiceClient(live.predict_url, live.embedding_url, max_batch_rows=64)
    assert client.ping()
    x = np.asarray(rows(150))
    out = client.predict(x)
    np.testing.assert_allclose(out, forward(model, x).posteriors)
    assert client.queries_used == 150
    assert client.remaining_budget == 100
    assert live.ledger.used == 150


def test_client_surfaces_partial_results_on_exhaustion(live):
    client = ServiceClient(live.predict_url, max_batch_rows=100)
    with pytest.raises(BudgetExhaustedError) as e:
        client.predict(np.asarray(rows(300)))
    assert e.value.partial.shape == (200, 3)
    assert e.value.remaining_budget == 50
    assert client.queries_used == 200


def test_client_maps_wire_errors(live):
    client = ServiceClient(live.predict_url)
    with pytest.raises(ServiceRequestError) as e:
        client.predict(np.zeros((2, WIDTH + 2)))
    assert e.value.code == "dimension_mismatch"
    with pytest.raises(PreconditionError):
        client.embed(np.zeros((1, WIDTH)))


def test_unreachable_service_does_not_ping():
    assert not ServiceClient("http://127.0.0.1:9/predict", timeout=1.0).ping()
