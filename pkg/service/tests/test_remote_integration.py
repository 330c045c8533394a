"""The ranking pipeline's remote-scorer client against a live service."""

import threading
import time

import pytest
import uvicorn

from scoring_service import create_app
from scoring_service.backends import StubBackend

from turnrank.errors import RemoteScoringError
from turnrank.scoring import RenderedInput, remote_scorer


class RecordingStub(StubBackend):
    """Stub that records every batch the service hands it."""

    def __init__(self):
        self.batches: list[list[str]] = []

    def score(self, inputs):
        self.batches.append(list(inputs))
        return super().score(inputs)


class BadRangeBackend(StubBackend):
    name = "bad-range"

    def score(self, inputs):
        return [1.5] * len(inputs)


@pytest.fixture
def live_service():
    backend = RecordingStub()
    app = create_app(backend, max_batch_size=100)
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10.0
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("service did not start")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    yield f"http://127.0.0.1:{port}", backend
    server.should_exit = True
    thread.join(timeout=5.0)


def _inputs(n):
    return [
        RenderedInput(f"Query: q{i} Context:  Document: d{i} Relevant:", 128, 384)
        for i in range(n)
    ]


def test_250_inputs_arrive_in_3_ordered_chunks(live_service):
    endpoint, backend = live_service
    scorer = remote_scorer(endpoint, batch_size=100)
    scores = scorer(_inputs(250))

    assert scores == [0.5] * 250
    assert [len(batch) for batch in backend.batches] == [100, 100, 50]
    received = [text for batch in backend.batches for text in batch]
    assert received == [item.text for item in _inputs(250)]


def test_health_advertises_the_chunk_limit(live_service):
    endpoint, _ = live_service
    import requests

    payload = requests.get(f"{endpoint}/health", timeout=5).json()
    assert payload == {"backend": "stub", "max_batch_size": 100}


def test_client_chunks_within_the_service_limit(live_service):
    endpoint, backend = live_service
    scorer = remote_scorer(endpoint, batch_size=64)
    scores = scorer(_inputs(130))
    assert len(scores) == 130
    assert all(len(batch) <= 100 for batch in backend.batches)


def test_out_of_range_backend_trips_the_client_contract_check():
    app = create_app(BadRangeBackend(), max_batch_size=100)
    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    while not server.started:
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    try:
        scorer = remote_scorer(f"http://127.0.0.1:{port}", batch_size=10, retries=0)
        # the service refuses to emit the bad scores (500), and the client
        # surfaces the failed chunk rather than accepting them
        with pytest.raises(RemoteScoringError) as excinfo:
            scorer(_inputs(3))
        assert excinfo.value.chunk_index == 0
    finally:
        server.should_exit = True
        thread.join(timeout=5.0)
