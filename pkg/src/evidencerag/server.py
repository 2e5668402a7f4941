"""Read-only HTTP service over a loaded pipeline.

Bodies mirror the CLI's ``--json`` output byte for byte.
"""

from __future__ import annotations

import json
import logging
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .errors import ProviderError, RagError
from .pipeline import Pipeline

log = logging.getLogger(__name__)

MAX_BODY = 1 << 20


def make_handler(pipeline: Pipeline):
    from .cli import dumps, search_payload

    class Handler(BaseHTTPRequestHandler):
        server_version = "evidencerag"
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.info("%s " + fmt, self.address_string(), *args)

        def _send(self, status: int, obj) -> None:
            body = (dumps(obj) + "\n").encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _error(self, status: HTTPStatus, message: str) -> None:
            self._send(status, {"error": message})

        def _body(self) -> dict | None:
            try:
                length = int(self.headers.get("Content-Length", "0"))
            except ValueError:
                length = -1
            if length < 0 or length > MAX_BODY:
                self._error(HTTPStatus.BAD_REQUEST, "bad Content-Length")
                return None
            try:
                data = json.loads(self.rfile.read(length).decode("utf-8") or "{}")
            except (UnicodeDecodeError, json.JSONDecodeError):
                self._error(HTTPStatus.BAD_REQUEST, "body must be UTF-8 JSON")
                return None
            if not isinstance(data, dict):
                self._error(HTTPStatus.BAD_REQUEST, "body must be a JSON object")
                return None
            return data

        def do_GET(self):
            if self.path == "/v1/health":
                self._send(HTTPStatus.OK, {"status": "ok", "passages": len(pipeline.store)})
            else:
                self._error(HTTPStatus.NOT_FOUND, f"no route {self.path}")

        def do_POST(self):
            if self.path not in ("/v1/search", "/v1/answer"):
                self._error(HTTPStatus.NOT_FOUND, f"no route {self.path}")
                return
            data = self._body()
            if data is None:
                return
            try:
                if self.path == "/v1/search":
                    query = data.get("query")
                    if not isinstance(query, str) or not query.strip():
                        self._error(HTTPStatus.BAD_REQUEST, "'query' must be a non-empty string")
                        return
                    self._send(HTTPStatus.OK, search_payload(pipeline, query, bool(data.get("judge", False))))
                else:
                    question = data.get("question")
                    if not isinstance(question, str) or not question.strip():
                        self._error(HTTPStatus.BAD_REQUEST, "'question' must be a non-empty string")
                        return
                    self._send(HTTPStatus.OK, pipeline.answer(question).to_dict())
            except ProviderError as exc:
                self._error(HTTPStatus.BAD_GATEWAY, str(exc))
            except RagError as exc:
                self._error(HTTPStatus.UNPROCESSABLE_ENTITY, str(exc))

    return Handler


def make_server(pipeline: Pipeline, host: str = "127.0.0.1", port: int = 8080) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), make_handler(pipeline))
    server.daemon_threads = True
    return server


def serve(pipeline: Pipeline, host: str = "127.0.0.1", port: int = 8080) -> None:
    server = make_server(pipeline, host, port)
    log.warning("listening on http://%s:%d", *server.server_address[:2])
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
