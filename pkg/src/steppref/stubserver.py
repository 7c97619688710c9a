"""Scriptable chat-completions server for exercising the HTTP client.

Serves POST /v1/chat/completions from a finite script of canned
responses, then falls back to a default reply. Each script entry may
set the HTTP status, the reply text, a delay (to provoke client
timeouts), or a raw body that bypasses JSON shaping (to provoke parse
failures). Every request is recorded for assertions.

Runs in-process for tests (`with StubServer(...) as stub:`) or as a
standalone process via the command line interface.
"""
from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from .errors import ConfigError

DEFAULT_CONTENT = "Step 1: stub reply\nAnswer: 0"

_ALLOWED_KEYS = {"status", "content", "sleep_s", "raw_body"}


def check_response_spec(spec: dict) -> dict:
    """Validate one scripted response; unknown or ill-typed keys are refused."""
    if not isinstance(spec, dict):
        raise ConfigError(f"response spec must be an object, got {type(spec).__name__}")
    unknown = set(spec) - _ALLOWED_KEYS
    if unknown:
        raise ConfigError(f"unknown response spec keys: {sorted(unknown)}")
    status = spec.get("status", 200)
    if not isinstance(status, int) or not 100 <= status <= 599:
        raise ConfigError(f"status must be an HTTP status code, got {status!r}")
    content = spec.get("content", DEFAULT_CONTENT)
    if not isinstance(content, str):
        raise ConfigError(f"content must be a string, got {type(content).__name__}")
    sleep_s = spec.get("sleep_s", 0.0)
    if not isinstance(sleep_s, (int, float)) or isinstance(sleep_s, bool) or sleep_s < 0:
        raise ConfigError(f"sleep_s must be a non-negative number, got {sleep_s!r}")
    raw_body = spec.get("raw_body")
    if raw_body is not None and not isinstance(raw_body, str):
        raise ConfigError(f"raw_body must be a string, got {type(raw_body).__name__}")
    return {
        "status": status,
        "content": content,
        "sleep_s": float(sleep_s),
        "raw_body": raw_body,
    }


def load_fixture(path: str | Path) -> list[dict]:
    """Read a JSON array of response specs; malformed fixtures are refused."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read fixture {path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"fixture {path} is not valid JSON: {e}") from e
    if not isinstance(doc, list):
        raise ConfigError(f"fixture {path} must hold a JSON array of response specs")
    return [check_response_spec(entry) for entry in doc]


def _completion_body(content: str, serial: int) -> bytes:
    doc = {
        "id": f"stub-{serial}",
        "object": "chat.completion",
        "model": "stub",
        "choices": [
            {
                "index": 0,
                "message": {"role": "assistant", "content": content},
                "finish_reason": "stop",
            }
        ],
    }
    return json.dumps(doc).encode("utf-8")


class _Handler(BaseHTTPRequestHandler):
    server: "_StubHTTPServer"

    def log_message(self, fmt: str, *args) -> None:  # silence default stderr chatter
        if self.server.verbose:
            print(f"[stub] {fmt % args}", flush=True)

    def do_POST(self) -> None:
        length = int(self.headers.get("Content-Length", "0"))
        raw = self.rfile.read(length) if length else b""
        try:
            body = json.loads(raw.decode("utf-8")) if raw else None
        except (UnicodeDecodeError, json.JSONDecodeError):
            body = raw.decode("utf-8", errors="replace")
        spec, serial = self.server.next_response(
            {
                "path": self.path,
                "headers": {k.lower(): v for k, v in self.headers.items()},
                "body": body,
            }
        )
        if spec["sleep_s"]:
            time.sleep(spec["sleep_s"])
        if spec["raw_body"] is not None:
            payload = spec["raw_body"].encode("utf-8")
        else:
            payload = _completion_body(spec["content"], serial)
        try:
            self.send_response(spec["status"])
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)
        except (BrokenPipeError, ConnectionResetError):
            pass  # client gave up (e.g. timed out); nothing to salvage


class _StubHTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, addr, script: list[dict], default_content: str, verbose: bool):
        super().__init__(addr, _Handler)
        self._lock = threading.Lock()
        self._script = list(script)
        self._default = check_response_spec({"content": default_content})
        self._serial = 0
        self.verbose = verbose
        self.requests: list[dict] = []

    def next_response(self, request: dict) -> tuple[dict, int]:
        with self._lock:
            self.requests.append(request)
            self._serial += 1
            spec = self._script.pop(0) if self._script else self._default
            return spec, self._serial


class StubServer:
    """In-process stub; bind with port=0 to take any free port."""

    def __init__(
        self,
        responses: Optional[list[dict]] = None,
        default_content: str = DEFAULT_CONTENT,
        host: str = "127.0.0.1",
        port: int = 0,
        verbose: bool = False,
    ) -> None:
        script = [check_response_spec(r) for r in (responses or [])]
        self._server = _StubHTTPServer((host, port), script, default_content, verbose)
        self._thread: Optional[threading.Thread] = None

    @property
    def base_url(self) -> str:
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def requests(self) -> list[dict]:
        return self._server.requests

    @property
    def n_requests(self) -> int:
        return len(self._server.requests)

    def start(self) -> "StubServer":
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "StubServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


def serve_forever(
    host: str,
    port: int,
    fixture: Optional[str] = None,
    default_content: str = DEFAULT_CONTENT,
    verbose: bool = True,
) -> None:
    """Blocking entry point for the command line; Ctrl-C stops it."""
    responses = load_fixture(fixture) if fixture else []
    stub = StubServer(
        responses, default_content=default_content, host=host, port=port, verbose=verbose
    )
    stub.start()
    print(f"[stub] listening on {stub.base_url} "
          f"({len(responses)} scripted responses)", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        stub.stop()
