from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from twon.model import Message, MessageKind


def make_message(
    mid: str = "m1",
    sender: str = "a",
    recipient: str = "b",
    tick: int = 0,
    text: str = "hello there",
    kind: MessageKind = MessageKind.POST,
    reply_to: str | None = None,
    topic: str | None = None,
) -> Message:
    return Message(
        id=mid,
        sender=sender,
        recipient=recipient,
        tick=tick,
        kind=kind,
        reply_to=reply_to,
        text=text,
        topic=topic,
    )


class HttpStub:
    """In-process HTTP server whose per-path behavior tests program.

    routes maps a path to a callable(payload dict) -> (status, body dict).
    Every received (path, payload) is recorded.
    """

    def __init__(self) -> None:
        self.routes: dict[str, object] = {}
        self.requests: list[tuple[str, dict]] = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self) -> None:
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                stub.requests.append((self.path, payload))
                route = stub.routes.get(self.path)
                if route is None:
                    self._respond(404, {"error": {"code": "not_found", "message": self.path}})
                    return
                status, body = route(payload)
                self._respond(status, body)

            def do_GET(self) -> None:
                route = stub.routes.get(self.path)
                if route is None:
                    self._respond(404, {"error": {"code": "not_found", "message": self.path}})
                    return
                status, body = route({})
                self._respond(status, body)

            def _respond(self, status: int, body: dict) -> None:
                blob = json.dumps(body).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(blob)))
                self.end_headers()
                self.wfile.write(blob)

            def log_message(self, *args) -> None:
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()
        self.url = f"http://127.0.0.1:{self.server.server_port}"

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def http_stub():
    stub = HttpStub()
    yield stub
    stub.close()
