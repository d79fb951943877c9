"""Deterministic mock teacher server for offline gateway and processor tests.

Speaks the standard chat-completions wire shape (POST /v1/chat/completions)
and answers from a scripted scenario: an ordered rule list where each rule
matches on model name and/or a substring of the conversation, and replies
with canned content, a scripted failure, or a delay. Counters (requests,
in-flight peak, per-rule hits) are exposed at /__mock__/stats so tests can
assert call budgets and concurrency bounds.
"""

from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

import yaml


class ScenarioRule:
    def __init__(self, raw: dict):
        match = raw.get("match", {}) or {}
        contains = match.get("contains")
        # Accept a single substring or a list that must all appear.
        if isinstance(contains, str):
            contains = [contains]
        self.contains: Optional[list[str]] = contains
        self.model: Optional[str] = match.get("model")
        self.content: str = raw.get("content", "")
        self.delay_ms: int = int(raw.get("delay_ms", 0))
        fail = raw.get("fail") or {}
        self.fail_status: int = int(fail.get("status", 500))
        self.fail_always: bool = bool(fail.get("always", False))
        self.fail_times: int = int(fail.get("times", 0))
        self.hits = 0
        self.failures_served = 0

    def matches(self, model: str, text: str) -> bool:
        if self.model is not None and self.model != model:
            return False
        if self.contains is not None and not all(c in text for c in self.contains):
            return False
        return True


class Scenario:
    """Ordered rules plus a default reply; first matching rule wins."""

    def __init__(self, spec: dict):
        self.rules = [ScenarioRule(r) for r in spec.get("rules", [])]
        default = spec.get("default", {}) or {}
        self.default_content: str = default.get("content", "OK")
        self.default_delay_ms: int = int(default.get("delay_ms", 0))

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path, encoding="utf-8") as f:
            return cls(yaml.safe_load(f) or {})


class _State:
    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.lock = threading.Lock()
        self.requests = 0
        self.completions = 0
        self.failures = 0
        self.in_flight = 0
        self.peak_in_flight = 0

    def enter(self):
        with self.lock:
            self.requests += 1
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)

    def leave(self):
        with self.lock:
            self.in_flight -= 1

    def stats(self) -> dict:
        with self.lock:
            return {
                "requests": self.requests,
                "completions": self.completions,
                "failures": self.failures,
                "in_flight": self.in_flight,
                "peak_in_flight": self.peak_in_flight,
                "rule_hits": [r.hits for r in self.scenario.rules],
            }

    def reset(self):
        with self.lock:
            self.requests = self.completions = self.failures = 0
            self.peak_in_flight = self.in_flight
            for r in self.scenario.rules:
                r.hits = 0
                r.failures_served = 0


class _Handler(BaseHTTPRequestHandler):
    state: _State  # set on the server class per instance

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _send_json(self, status: int, obj: dict):
        body = json.dumps(obj).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/__mock__/stats":
            self._send_json(200, self.state.stats())
        else:
            self._send_json(404, {"error": "not found"})

    def do_POST(self):
        if self.path == "/__mock__/reset":
            self.state.reset()
            self._send_json(200, {"ok": True})
            return
        if self.path != "/v1/chat/completions":
            self._send_json(404, {"error": "not found"})
            return

        length = int(self.headers.get("Content-Length", "0"))
        try:
            payload = json.loads(self.rfile.read(length))
        except json.JSONDecodeError:
            self._send_json(400, {"error": "bad json"})
            return

        state = self.state
        state.enter()
        # In-flight is decremented *before* the response is written so the
        # peak counter cannot over-read when a client releases its slot the
        # instant the reply arrives.
        try:
            model = payload.get("model", "")
            text = "\n".join(m.get("content", "") for m in payload.get("messages", []))
            scenario = state.scenario

            rule = None
            with state.lock:
                for r in scenario.rules:
                    if r.matches(model, text):
                        rule = r
                        r.hits += 1
                        break
                fail = False
                if rule is not None:
                    if rule.fail_always:
                        fail = True
                    elif rule.failures_served < rule.fail_times:
                        rule.failures_served += 1
                        fail = True

            delay_ms = rule.delay_ms if rule is not None else scenario.default_delay_ms
            if delay_ms:
                time.sleep(delay_ms / 1000.0)

            if rule is not None and fail:
                with state.lock:
                    state.failures += 1
                status, body = rule.fail_status, {"error": "scripted failure"}
            else:
                content = rule.content if rule is not None else scenario.default_content
                with state.lock:
                    state.completions += 1
                status, body = 200, {
                    "id": "mock-completion",
                    "object": "chat.completion",
                    "model": model,
                    "choices": [{
                        "index": 0,
                        "message": {"role": "assistant", "content": content},
                        "finish_reason": "stop",
                    }],
                    "usage": {
                        "prompt_tokens": len(text.split()),
                        "completion_tokens": len(content.split()),
                    },
                }
        finally:
            state.leave()
        self._send_json(status, body)


class MockTeacherServer:
    """Scripted chat-completions server bound to localhost.

    Use as a context manager in tests; `base_url` is valid after start().
    """

    def __init__(self, scenario: Scenario, port: int = 0):
        self.state = _State(scenario)
        handler = type("BoundHandler", (_Handler,), {"state": self.state})
        self.httpd = ThreadingHTTPServer(("127.0.0.1", port), handler)
        self.httpd.daemon_threads = True
        self.port = self.httpd.server_address[1]
        self.base_url = f"http://127.0.0.1:{self.port}"
        self._thread: Optional[threading.Thread] = None

    def start(self) -> "MockTeacherServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread:
            self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def stats(self) -> dict:
        return self.state.stats()

    def reset_stats(self):
        self.state.reset()


def serve_forever(scenario_path: str, port: int) -> None:
    """Blocking entry point used by the CLI `mock` subcommand."""
    server = MockTeacherServer(Scenario.load(scenario_path), port=port)
    print(f"mock teacher server listening on {server.base_url}")
    try:
        server.httpd.serve_forever()
    except KeyboardInterrupt:
        server.stop()
