from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from tooldiag.scenario import generate_dataset

_ACCEPTANCE: dict[str, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): one acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0]
    failed = report.failed or (report.when == "call" and report.skipped)
    if failed:
        _ACCEPTANCE[label] = "FAIL"
    elif report.when == "call":
        _ACCEPTANCE.setdefault(label, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0][1:])):
        terminalreporter.write_line(f"ACCEPTANCE {label}: {_ACCEPTANCE[label]}")


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(11, 40)


# ---------------------------------------------------------------------------
# mock chat-completions server
# ---------------------------------------------------------------------------

TOOL_CALL_RESPONSE = {
    "id": "cmpl-1",
    "choices": [{
        "index": 0,
        "message": {
            "role": "assistant",
            "content": None,
            "tool_calls": [{
                "id": "call_a",
                "type": "function",
                "function": {"name": "db_query_tool", "arguments": "{\"invoice_id\": \"INV-2024-0001\"}"},
            }],
        },
        "finish_reason": "tool_calls",
    }],
}

PROSE_RESPONSE = {
    "id": "cmpl-2",
    "choices": [{
        "index": 0,
        "message": {"role": "assistant", "content": "The invoice appears to be in order."},
        "finish_reason": "stop",
    }],
}


class MockChatServer:
    """Answers by model name: mock-toolcall, mock-prose, mock-timeout, mock-500."""

    def __init__(self, delay_s: float = 1.0):
        self.requests: list[dict] = []
        self.delay_s = delay_s
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                body["_auth"] = self.headers.get("Authorization")
                server.requests.append(body)
                model = body.get("model")
                if model == "mock-timeout":
                    time.sleep(server.delay_s)
                if model == "mock-500":
                    self.send_response(500)
                    self.end_headers()
                    return
                payload = TOOL_CALL_RESPONSE if model == "mock-toolcall" else PROSE_RESPONSE
                data = json.dumps(payload).encode()
                try:
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.httpd.daemon_threads = True
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    @property
    def base_url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def mock_chat():
    with MockChatServer() as server:
        yield server
