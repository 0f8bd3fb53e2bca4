"""JSON-over-HTTP transport for the registry, and the matching client.

Endpoints::

    POST /v1/subscribe          {"client_id": ...}         -> requirements
    POST /v1/generators         canonical artifact JSON     -> {"status", "generator_id"}
    GET  /v1/generators         (header X-Client-Id)        -> {"generators": [...]}
    GET  /v1/generators/{id}    (header X-Client-Id)        -> canonical artifact JSON

Errors use the envelope ``{"code": ..., "message": ...}``.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.request
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from ..errors import (AuthError, IntegrityError, NotFoundError, PolicyError, RequestError,
                      SgdeError)
from ..generator import GeneratorArtifact, deserialize, serialize
from ..requirements import ServerRequirements
from .registry import PushResult, Registry

log = logging.getLogger(__name__)

CLIENT_HEADER = "X-Client-Id"
MAX_BODY = 64 * 1024 * 1024

_STATUS = {
    RequestError: HTTPStatus.BAD_REQUEST,
    AuthError: HTTPStatus.FORBIDDEN,
    NotFoundError: HTTPStatus.NOT_FOUND,
    IntegrityError: HTTPStatus.UNPROCESSABLE_ENTITY,
    PolicyError: HTTPStatus.UNPROCESSABLE_ENTITY,
}
_PUSH_STATUS = {"integrity_reject": HTTPStatus.UNPROCESSABLE_ENTITY,
                "policy_reject": HTTPStatus.UNPROCESSABLE_ENTITY,
                "duplicate": HTTPStatus.CONFLICT}


def _status_for(exc: SgdeError) -> HTTPStatus:
    for cls in type(exc).__mro__:
        if cls in _STATUS:
            return _STATUS[cls]
    return HTTPStatus.INTERNAL_SERVER_ERROR


class _Handler(BaseHTTPRequestHandler):
    registry: Registry
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log.debug("%s - " + fmt, self.address_string(), *args)

    def _send(self, status: int, body: bytes, content_type="application/json") -> None:
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, obj) -> None:
        self._send(status, json.dumps(obj, sort_keys=True).encode("utf-8"))

    def _error(self, status: int, code: str, message: str) -> None:
        self._send_json(status, {"code": code, "message": message})

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY:
            raise RequestError("request body too large")
        return self.rfile.read(length)

    def _client_id(self) -> str:
        cid = self.headers.get(CLIENT_HEADER)
        if not cid:
            raise RequestError(f"missing {CLIENT_HEADER} header")
        return cid

    def _dispatch(self, method: str) -> None:
        path = self.path.split("?", 1)[0].rstrip("/")
        try:
            if method == "POST" and path == "/v1/subscribe":
                try:
                    payload = json.loads(self._body() or b"{}")
                except json.JSONDecodeError:
                    raise RequestError("body must be JSON") from None
                req = self.registry.subscribe(payload.get("client_id") if isinstance(payload, dict) else None)
                self._send_json(HTTPStatus.OK, req.to_dict())
            elif method == "POST" and path == "/v1/generators":
                res = self.registry.push(self._client_id(), self._body())
                if res.accepted:
                    self._send_json(HTTPStatus.CREATED, {"status": "accepted",
                                                         "generator_id": res.generator_id})
                else:
                    body = {"code": res.code, "message": res.reason,
                            "generator_id": res.generator_id}
                    if res.recomputed_epsilon is not None:
                        body["recomputed_epsilon"] = res.recomputed_epsilon
                    self._send_json(_PUSH_STATUS[res.code], body)
            elif method == "GET" and path == "/v1/generators":
                cat = self.registry.list_generators(self._client_id())
                self._send_json(HTTPStatus.OK, {"generators": cat})
            elif method == "GET" and path.startswith("/v1/generators/"):
                gid = path[len("/v1/generators/"):]
                self._send(HTTPStatus.OK, self.registry.pull_bytes(self._client_id(), gid))
            else:
                self._error(HTTPStatus.NOT_FOUND, "not_found", f"no route for {method} {path}")
        except SgdeError as exc:
            self._error(_status_for(exc), exc.code, str(exc))
        except Exception as exc:  # keep the server alive on handler bugs
            log.exception("unhandled error")
            self._error(HTTPStatus.INTERNAL_SERVER_ERROR, "internal_error", str(exc))

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


class RegistryServer:
    """Threaded HTTP server bound to a :class:`Registry`."""

    def __init__(self, registry: Registry, host: str = "127.0.0.1", port: int = 0):
        handler = type("Handler", (_Handler,), {"registry": registry})
        self.registry = registry
        self.httpd = ThreadingHTTPServer((host, port), handler)
        self.httpd.daemon_threads = True
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "RegistryServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.httpd.serve_forever()

    def stop(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


_ERRORS = {cls.code: cls for cls in (RequestError, AuthError, NotFoundError, IntegrityError,
                                     PolicyError)}


class HttpClient:
    """Client side of the exchange protocol over HTTP."""

    def __init__(self, base_url: str, client_id: str, timeout: float = 30.0,
                 token: str | None = None):
        self.base_url = base_url.rstrip("/")
        self.client_id = client_id
        self.timeout = timeout
        self.token = token  # sent as a bearer token; the reference server ignores it

    def _request(self, method: str, path: str, body: bytes | None = None) -> tuple[int, bytes]:
        headers = {CLIENT_HEADER: self.client_id, "Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        req = urllib.request.Request(self.base_url + path, data=body, method=method,
                                     headers=headers)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read()

    @staticmethod
    def _raise(status: int, body: bytes):
        try:
            env = json.loads(body)
            code, message = env.get("code", "error"), env.get("message", "")
        except (ValueError, AttributeError):
            code, message = "error", body.decode("utf-8", "replace")
        raise _ERRORS.get(code, SgdeError)(f"HTTP {status}: {message}")

    def subscribe(self) -> ServerRequirements:
        status, body = self._request("POST", "/v1/subscribe",
                                     json.dumps({"client_id": self.client_id}).encode())
        if status != 200:
            self._raise(status, body)
        return ServerRequirements.from_dict(json.loads(body))

    def push(self, artifact: GeneratorArtifact | bytes) -> PushResult:
        blob = artifact if isinstance(artifact, (bytes, bytearray)) else serialize(artifact)
        status, body = self._request("POST", "/v1/generators", bytes(blob))
        doc = json.loads(body)
        if status == 201:
            return PushResult(True, doc["generator_id"])
        if doc.get("code") in _PUSH_STATUS:
            return PushResult(False, doc.get("generator_id", ""), doc.get("message", ""),
                              doc["code"], doc.get("recomputed_epsilon"))
        self._raise(status, body)

    def list_generators(self) -> list[dict]:
        status, body = self._request("GET", "/v1/generators")
        if status != 200:
            self._raise(status, body)
        return json.loads(body)["generators"]

    def pull_bytes(self, generator_id: str) -> bytes:
        status, body = self._request("GET", f"/v1/generators/{generator_id}")
        if status != 200:
            self._raise(status, body)
        return body

    def pull(self, generator_id: str) -> GeneratorArtifact:
        return deserialize(self.pull_bytes(generator_id))


class LocalClient:
    """Same interface as :class:`HttpClient`, bound to an in-process registry."""

    def __init__(self, registry: Registry, client_id: str):
        self.registry = registry
        self.client_id = client_id

    def subscribe(self) -> ServerRequirements:
        return self.registry.subscribe(self.client_id)

    def push(self, artifact) -> PushResult:
        return self.registry.push(self.client_id, artifact)

    def list_generators(self) -> list[dict]:
        return self.registry.list_generators(self.client_id)

    def pull_bytes(self, generator_id: str) -> bytes:
        return self.registry.pull_bytes(self.client_id, generator_id)

    def pull(self, generator_id: str) -> GeneratorArtifact:
        return deserialize(self.pull_bytes(generator_id))
