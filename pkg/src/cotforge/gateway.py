"""Elastic, failure-tolerant client pool over chat-completion teacher endpoints.

Each teacher has a resizable set of inference nodes with a per-node in-flight
cap. Dispatch picks the least-loaded node (ties broken round-robin), blocks
when every node is saturated, retries failed attempts with exponential
backoff and full jitter, and never cancels in-flight work on resize.
"""

from __future__ import annotations

import os
import random
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import requests


class GatewayConfigError(ValueError):
    """Unknown teacher, inactive teacher, or invalid endpoint configuration."""


class GatewayTransportError(RuntimeError):
    """All retry attempts exhausted; carries the last underlying cause."""

    def __init__(self, message: str, attempts: int, last_cause: Optional[BaseException] = None):
        super().__init__(message)
        self.attempts = attempts
        self.last_cause = last_cause


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.05  # seconds

    def __post_init__(self):
        if self.max_attempts < 1:
            raise GatewayConfigError("max_attempts must be >= 1")


@dataclass(frozen=True)
class TeacherEndpoint:
    teacher_id: str
    node_urls: tuple[str, ...]
    max_in_flight_per_node: int = 4
    request_timeout: float = 30.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self):
        if self.max_in_flight_per_node < 1:
            raise GatewayConfigError("max_in_flight_per_node must be >= 1")


@dataclass(frozen=True)
class ChatRequest:
    teacher_id: str
    messages: tuple[dict, ...]
    temperature: float = 0.7
    max_output_tokens: int = 4096

    def __post_init__(self):
        if not self.messages:
            raise GatewayConfigError("messages must be non-empty")
        if self.messages[0].get("role") not in ("system", "user"):
            raise GatewayConfigError('first message role must be "system" or "user"')
        if self.temperature < 0:
            raise GatewayConfigError("temperature must be >= 0")


@dataclass(frozen=True)
class CompletionResult:
    content: str
    usage: dict
    node_url: str
    retries: int


@dataclass(frozen=True)
class TeacherStats:
    requests_sent: int = 0
    successes: int = 0
    retries: int = 0
    failures: int = 0
    in_flight: int = 0


@dataclass(frozen=True)
class GatewayStats:
    per_teacher: dict[str, TeacherStats]
    node_saturation: dict[str, float]  # node url -> in_flight / cap


def token_env_var(teacher_id: str) -> str:
    return "TEACHER_TOKEN_" + re.sub(r"[^A-Za-z0-9]", "_", teacher_id).upper()


class _Node:
    __slots__ = ("url", "in_flight")

    def __init__(self, url: str):
        self.url = url
        self.in_flight = 0


class _Teacher:
    def __init__(self, endpoint: TeacherEndpoint):
        self.endpoint = endpoint
        self.nodes: list[_Node] = [_Node(u) for u in endpoint.node_urls]
        self.rr = 0
        # Counters (guarded by the pool condition).
        self.requests_sent = 0
        self.successes = 0
        self.retries = 0
        self.failures = 0
        self.in_flight = 0

    @property
    def active(self) -> bool:
        return bool(self.nodes)


class GatewayPool:
    """Thread-safe pool shared by concurrent pipeline workers.

    submit_chat blocks the caller until completion or final failure; per-node
    in-flight never exceeds the endpoint's cap.
    """

    def __init__(self, endpoints: tuple[TeacherEndpoint, ...] = (), session: Optional[requests.Session] = None):
        self._cond = threading.Condition()
        self._teachers: dict[str, _Teacher] = {}
        self._session = session or requests.Session()
        self._rng = random.Random()
        for ep in endpoints:
            self.register(ep)

    def register(self, endpoint: TeacherEndpoint) -> None:
        if not endpoint.node_urls:
            raise GatewayConfigError(f"teacher {endpoint.teacher_id!r} registered with no nodes")
        with self._cond:
            self._teachers[endpoint.teacher_id] = _Teacher(endpoint)

    def resize_pool(self, teacher_id: str, node_urls: list[str]) -> None:
        """Swap the node set; in-flight requests to removed nodes drain."""
        with self._cond:
            t = self._require(teacher_id)
            kept = {n.url: n for n in t.nodes}
            # Reuse node objects for retained urls so their counts carry over.
            t.nodes = [kept.get(u, _Node(u)) for u in node_urls]
            t.rr = 0
            self._cond.notify_all()

    def _require(self, teacher_id: str) -> _Teacher:
        t = self._teachers.get(teacher_id)
        if t is None:
            raise GatewayConfigError(f"unknown teacher_id {teacher_id!r}")
        return t

    def _acquire_node(self, teacher_id: str) -> _Node:
        with self._cond:
            while True:
                t = self._require(teacher_id)
                if not t.active:
                    raise GatewayConfigError(f"teacher {teacher_id!r} has no active nodes")
                cap = t.endpoint.max_in_flight_per_node
                candidates = [n for n in t.nodes if n.in_flight < cap]
                if candidates:
                    low = min(n.in_flight for n in candidates)
                    tied = [n for n in candidates if n.in_flight == low]
                    node = tied[t.rr % len(tied)]
                    t.rr += 1
                    node.in_flight += 1
                    t.in_flight += 1
                    return node
                self._cond.wait()

    def _release_node(self, teacher_id: str, node: _Node) -> None:
        with self._cond:
            node.in_flight -= 1
            t = self._teachers.get(teacher_id)
            if t is not None:
                t.in_flight -= 1
            self._cond.notify_all()

    def submit_chat(self, request: ChatRequest) -> CompletionResult:
        with self._cond:
            t = self._require(request.teacher_id)
            t.requests_sent += 1
            retry = t.endpoint.retry
            timeout = t.endpoint.request_timeout

        token = os.environ.get(token_env_var(request.teacher_id), "")
        headers = {"Content-Type": "application/json"}
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": request.teacher_id,
            "messages": list(request.messages),
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }

        last_cause: Optional[BaseException] = None
        for attempt in range(retry.max_attempts):
            node = self._acquire_node(request.teacher_id)
            try:
                resp = self._session.post(
                    node.url.rstrip("/") + "/v1/chat/completions",
                    json=body, headers=headers, timeout=timeout,
                )
                resp.raise_for_status()
                data = resp.json()
                content = data["choices"][0]["message"]["content"]
                usage = data.get("usage", {})
            except (requests.RequestException, KeyError, IndexError, ValueError) as e:
                last_cause = e
            else:
                with self._cond:
                    t = self._teachers.get(request.teacher_id)
                    if t is not None:
                        t.successes += 1
                return CompletionResult(content=content, usage=usage,
                                        node_url=node.url, retries=attempt)
            finally:
                self._release_node(request.teacher_id, node)

            if attempt + 1 < retry.max_attempts:
                with self._cond:
                    t = self._teachers.get(request.teacher_id)
                    if t is not None:
                        t.retries += 1
                # Exponential backoff with full jitter.
                time.sleep(self._rng.uniform(0, retry.backoff_base * (2 ** attempt)))

        with self._cond:
            t = self._teachers.get(request.teacher_id)
            if t is not None:
                t.failures += 1
        raise GatewayTransportError(
            f"teacher {request.teacher_id!r}: all {retry.max_attempts} attempts failed: {last_cause}",
            attempts=retry.max_attempts, last_cause=last_cause,
        )

    def pool_stats(self) -> GatewayStats:
        with self._cond:
            per_teacher = {
                tid: TeacherStats(
                    requests_sent=t.requests_sent, successes=t.successes,
                    retries=t.retries, failures=t.failures, in_flight=t.in_flight,
                )
                for tid, t in self._teachers.items()
            }
            saturation = {
                n.url: n.in_flight / t.endpoint.max_in_flight_per_node
                for t in self._teachers.values() for n in t.nodes
            }
        return GatewayStats(per_teacher=per_teacher, node_saturation=saturation)
