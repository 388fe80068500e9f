"""Shared fixtures: the deterministic sample graph, the question
template catalog, the hand-built fixture corpus, and a recording HTTP
stub that stands in for a remote completion backend."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from recigraph.constraints import load_templates
from recigraph.kg_store import ingest_corpus
from recigraph.samplecorpus import build_sample_graph

DATA_DIR = Path(__file__).parent / "data"
FIXTURE_CORPUS = DATA_DIR / "fixture_corpus.jsonl"

_VERDICT_LINES: list[str] = []


def pytest_runtest_logreport(report):
    # Capture swallows the per-criterion verdict prints on passing
    # tests; stash them so the terminal summary can replay them.
    if report.when != "call":
        return
    for line in report.capstdout.splitlines():
        if line.startswith("ACCEPTANCE ") and line not in _VERDICT_LINES:
            _VERDICT_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICT_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _VERDICT_LINES:
        terminalreporter.write_line(line)


class RecordingStub:
    """Tiny HTTP server that records request payloads and headers.

    ``responder`` maps a decoded JSON payload to ``(status, body)``;
    the default echoes an empty completion.  ``body`` may be a dict
    (sent as JSON) or raw bytes (sent verbatim, for malformed-body
    tests).
    """

    def __init__(self):
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self.responder = lambda payload: (200, {"text": ""})
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                stub.requests.append(payload)
                stub.headers.append({k: v for k, v in self.headers.items()})
                status, body = stub.responder(payload)
                raw = body if isinstance(body, bytes) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def endpoint(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}/generate"

    def reset(self):
        self.requests.clear()
        self.headers.clear()
        self.responder = lambda payload: (200, {"text": ""})

    def close(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture(scope="session")
def stub_backend_server():
    stub = RecordingStub()
    yield stub
    stub.close()


@pytest.fixture()
def stub_server(stub_backend_server):
    stub_backend_server.reset()
    return stub_backend_server


@pytest.fixture(scope="session")
def sample_graph():
    return build_sample_graph()


@pytest.fixture(scope="session")
def templates():
    return load_templates()


@pytest.fixture(scope="session")
def fixture_graph():
    return ingest_corpus(FIXTURE_CORPUS)


@pytest.fixture(scope="session")
def sample_corpus_file(tmp_path_factory):
    from recigraph.samplecorpus import write_sample_corpus

    path = tmp_path_factory.mktemp("corpus") / "sample_corpus.jsonl"
    write_sample_corpus(path)
    return path
