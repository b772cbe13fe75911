"""Shared fixtures: fixture paths and a scriptable local HTTP endpoint."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"


@pytest.fixture
def fixture_dir() -> Path:
    return FIXTURES


class StubLlm:
    """Local endpoint whose behaviour each test scripts via `respond`.

    `respond(body)` returns (status, payload); received request bodies
    accumulate in `requests` in arrival order.
    """

    def __init__(self):
        self.requests: list[dict] = []
        self._lock = threading.Lock()
        self.respond = lambda body: (
            200,
            {"choices": [{"text": f"The answer is {body.get('seed')}."}]},
        )

        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802 (http.server API)
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length).decode("utf-8"))
                with stub._lock:
                    stub.requests.append(body)
                    status, payload = stub.respond(body)
                data = json.dumps(payload).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(
            target=self._server.serve_forever, daemon=True
        )
        self._thread.start()
        self.url = f"http://127.0.0.1:{self._server.server_address[1]}/generate"

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        self._thread.join(timeout=5)


@pytest.fixture
def llm_server():
    stub = StubLlm()
    yield stub
    stub.close()
