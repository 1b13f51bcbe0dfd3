"""Client for any endpoint speaking the chat-completions tool-calling convention."""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping
from urllib.parse import urlparse

import httpx

from ..scenario import TaskInstance
from ..workflow import AgentAction, ConversationState, InfrastructureError
from .base import BackendDescriptor

logger = logging.getLogger(__name__)

HANDOFF_MARKER = "HANDOFF:"
DECISION_MARKER = "FINAL_DECISION:"
_DECISIONS = ("RECONCILED", "DISPUTED")


@dataclass(frozen=True)
class RemoteEndpointConfig:
    base_url: str
    model_name: str
    api_key_env: str = "OPENAI_API_KEY"
    timeout_ms: int = 60_000
    max_retries: int = 2
    max_in_flight: int = 4
    temperature: float = field(default=0.0, init=False)

    def __post_init__(self) -> None:
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if not 0 <= self.max_retries <= 10:
            raise ValueError("max_retries must be between 0 and 10")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RemoteEndpointConfig:
        if "api_key" in data:
            raise ValueError("API keys are read from the environment only; set api_key_env instead")
        allowed = {f.name for f in fields(cls) if f.init}
        unknown = set(data) - allowed
        if unknown:
            raise ValueError(f"unknown remote config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def read(cls, path: str | Path) -> RemoteEndpointConfig:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/chat/completions"


def tool_declarations(conv: ConversationState) -> list[dict[str, Any]]:
    return [
        {
            "type": "function",
            "function": {
                "name": schema.name,
                "description": schema.description,
                "parameters": schema.json_schema(),
            },
        }
        for schema in conv.tools
    ]


def wire_messages(conv: ConversationState) -> list[dict[str, Any]]:
    out = []
    for msg in conv.messages:
        if msg["role"] == "assistant" and msg.get("tool_call"):
            call = msg["tool_call"]
            out.append({
                "role": "assistant",
                "content": None,
                "tool_calls": [{
                    "id": call["id"],
                    "type": "function",
                    "function": {"name": call["name"], "arguments": call["arguments"]},
                }],
            })
        elif msg["role"] == "tool":
            out.append({"role": "tool", "tool_call_id": msg["tool_call_id"], "content": msg["content"]})
        else:
            out.append({"role": msg["role"], "content": msg["content"] or ""})
    return out


def build_request(config: RemoteEndpointConfig, conv: ConversationState) -> dict[str, Any]:
    body: dict[str, Any] = {
        "model": config.model_name,
        "messages": wire_messages(conv),
        "temperature": 0,
    }
    tools = tool_declarations(conv)
    if tools:
        body["tools"] = tools
    return body


def action_from_content(content: str) -> AgentAction:
    text = content.strip()
    if text.startswith(HANDOFF_MARKER):
        return AgentAction.handoff(text[len(HANDOFF_MARKER):].strip())
    if text.startswith(DECISION_MARKER):
        token = text[len(DECISION_MARKER):].strip().split()
        value = token[0].strip(".").upper() if token else ""
        if value in _DECISIONS:
            return AgentAction.decision(value)
    return AgentAction.text(content)


def parse_response(payload: Any) -> AgentAction:
    """Map a chat-completions response body onto one agent action.

    Only the first tool call of a message is honoured. Anything that does not
    look like a chat-completions response becomes TEXT.
    """
    try:
        message = payload["choices"][0]["message"]
    except (KeyError, IndexError, TypeError):
        return AgentAction.text(json.dumps(payload) if not isinstance(payload, str) else payload)
    if not isinstance(message, dict):
        return AgentAction.text(str(message))
    calls = message.get("tool_calls") or []
    if calls and isinstance(calls, list):
        fn = calls[0].get("function", {}) if isinstance(calls[0], dict) else {}
        name = fn.get("name")
        args = fn.get("arguments")
        if isinstance(name, str):
            if not isinstance(args, str):
                # some servers return decoded objects; keep the closest textual form
                args = json.dumps(args)
            return AgentAction.tool_call(name, args)
    content = message.get("content")
    return action_from_content(content if isinstance(content, str) else "")


class RemoteClient:
    """Thread-safe HTTP client with a cap on concurrent requests."""

    def __init__(self, config: RemoteEndpointConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self._slots = threading.BoundedSemaphore(config.max_in_flight)
        self._http = httpx.Client(timeout=config.timeout_ms / 1000, transport=transport)
        self._lock = threading.Lock()
        self.in_flight = 0
        self.peak_in_flight = 0

    def close(self) -> None:
        self._http.close()

    def _headers(self) -> dict[str, str]:
        key = os.environ.get(self.config.api_key_env)
        return {"Authorization": f"Bearer {key}"} if key else {}

    def complete(self, body: dict[str, Any]) -> Any:
        attempts = self.config.max_retries + 1
        last_error = "no attempt made"
        with self._slots:
            with self._lock:
                self.in_flight += 1
                self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
            try:
                for attempt in range(attempts):
                    try:
                        resp = self._http.post(self.config.url, json=body, headers=self._headers())
                    except httpx.HTTPError as exc:
                        last_error = f"{type(exc).__name__}: {exc}"
                    else:
                        if resp.status_code < 400:
                            try:
                                return resp.json()
                            except ValueError:
                                return resp.text
                        last_error = f"HTTP {resp.status_code}"
                        if resp.status_code < 500 and resp.status_code != 429:
                            break
                    logger.warning("remote call failed (attempt %d/%d): %s", attempt + 1, attempts, last_error)
                    if attempt + 1 < attempts:
                        time.sleep(min(0.05 * 2**attempt, 1.0))
            finally:
                with self._lock:
                    self.in_flight -= 1
        raise InfrastructureError(f"{self.config.url}: {last_error}")


class RemotePolicy:
    def __init__(self, client: RemoteClient):
        self.client = client

    def next_action(self, conv: ConversationState) -> AgentAction:
        payload = self.client.complete(build_request(self.client.config, conv))
        return parse_response(payload)


class RemoteBackend:
    def __init__(self, config: RemoteEndpointConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self.client = RemoteClient(config, transport)
        host = urlparse(config.base_url).netloc or config.base_url
        self.descriptor = BackendDescriptor(kind="remote", label=config.model_name, platform=host)

    def for_task(self, instance: TaskInstance) -> RemotePolicy:
        return RemotePolicy(self.client)

    def close(self) -> None:
        self.client.close()


__all__ = [
    "RemoteBackend",
    "RemoteClient",
    "RemoteEndpointConfig",
    "RemotePolicy",
    "action_from_content",
    "build_request",
    "parse_response",
]
