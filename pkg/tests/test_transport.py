import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from mcqgen.candidates import ExternalFillMask
from mcqgen.errors import BackendError
from mcqgen.taxonomy import HttpLLMClient
from mcqgen.transport import HttpTransport, SubprocessTransport, make_transport, with_retries

ECHO = """
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    if req.get("die"):
        sys.exit(0)
    if req.get("garbage"):
        print("not json", flush=True)
        continue
    print(json.dumps({"echo": req, "predictions": [{"token": "Rome", "score": 0.9}]}), flush=True)
"""


@pytest.fixture
def echo():
    t = SubprocessTransport([sys.executable, "-c", ECHO], timeout=10)
    yield t
    t.close()


def test_subprocess_round_trip(echo):
    assert echo.request({"a": 1, "s": "سلام"})["echo"] == {"a": 1, "s": "سلام"}
    assert echo.request({"b": 2})["echo"] == {"b": 2}


def test_subprocess_restarts_after_exit(echo):
    with pytest.raises(BackendError):
        echo.request({"die": True})
    assert echo.request({"c": 3})["echo"] == {"c": 3}


def test_subprocess_bad_response(echo):
    with pytest.raises(BackendError):
        echo.request({"garbage": True})


def test_external_fillmask_over_subprocess(echo):
    fm = ExternalFillMask(echo, "ext", mask_token="[MASK]")
    assert fm.predict("The capital is [MASK]", 5) == [("Rome", 0.9)]
    assert fm.concurrent_safe is False


class _Handler(BaseHTTPRequestHandler):
    calls = []
    fail_first = 0

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).calls.append((self.headers.get("Authorization"), body))
        if type(self).fail_first > 0:
            type(self).fail_first -= 1
            self.send_response(503)
            self.end_headers()
            return
        out = {"choices": [{"message": {"content": "Geography"}}], "echo": body}
        data = json.dumps(out).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def server():
    _Handler.calls = []
    _Handler.fail_first = 0
    srv = HTTPServer(("127.0.0.1", 0), _Handler)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}/v1"
    srv.shutdown()
    srv.server_close()


def test_http_round_trip(server):
    t = make_transport({"endpoint": server, "timeout": 5})
    assert isinstance(t, HttpTransport)
    assert t.request({"x": 1})["echo"] == {"x": 1}


def test_http_errors_become_backend_errors(server):
    _Handler.fail_first = 1
    t = HttpTransport(server, timeout=5)
    with pytest.raises(BackendError):
        t.request({})
    with pytest.raises(BackendError):
        HttpTransport("http://127.0.0.1:9/none", timeout=1).request({})


def test_http_llm_client(server, monkeypatch):
    monkeypatch.setenv("MCQ_LLM_ENDPOINT", server)
    monkeypatch.setenv("MCQ_LLM_API_KEY", "k")
    client = HttpLLMClient(model="m1", timeout=5)
    assert client.complete("hello") == "Geography"
    auth, body = _Handler.calls[-1]
    assert auth == "Bearer k" and body["model"] == "m1" and body["messages"][0]["content"] == "hello"


def test_with_retries_backoff():
    delays, calls = [], []

    def flaky():
        calls.append(1)
        if len(calls) < 3:
            raise BackendError("busy")
        return "ok"

    assert with_retries(flaky, sleep=delays.append) == "ok"
    assert delays == [0.5, 1.0]
    with pytest.raises(BackendError):
        with_retries(lambda: (_ for _ in ()).throw(OSError("down")), attempts=2, sleep=lambda s: None)
    with pytest.raises(KeyError):
        with_retries(lambda: {}["x"], sleep=lambda s: None)


def test_make_transport_needs_target():
    with pytest.raises(ValueError):
        make_transport({})
    t = make_transport({"command": f"{sys.executable} -c pass"})
    assert isinstance(t, SubprocessTransport)
