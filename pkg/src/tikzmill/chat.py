"""Chat-completions client for the repair and description stages.

Speaks the de-facto open chat API: POST {base_url}/chat/completions with a
JSON body of model name plus a messages array of role/content pairs. The API
key comes from an environment variable named in the config, never from config
values. Retries with exponential backoff on 429/5xx/transport errors; a
semaphore enforces the per-client concurrency limit.
"""

from __future__ import annotations

import base64
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import httpx


class ChatError(Exception):
    pass


class ChatTransportError(ChatError):
    """Exhausted retries against the endpoint."""


class ChatProtocolError(ChatError):
    """Endpoint answered with something that is not a chat completion."""


@dataclass
class ChatEndpointConfig:
    base_url: str
    model_name: str
    api_key_env: str = "TIKZMILL_API_KEY"
    temperature: float = 0.0
    max_output_tokens: int = 4096
    request_timeout_s: float = 120.0
    max_retries: int = 3
    concurrency_limit: int = 4

    def __post_init__(self) -> None:
        if self.concurrency_limit < 1:
            raise ValueError("concurrency_limit must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


def text_part(text: str) -> dict:
    return {"type": "text", "text": text}


def image_part(image_bytes: bytes, media_type: str) -> dict:
    payload = base64.b64encode(image_bytes).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:{media_type};base64,{payload}"}}


_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class ChatClient:
    """Thread-safe chat client over httpx."""

    def __init__(
        self,
        cfg: ChatEndpointConfig,
        transport: Optional[httpx.BaseTransport] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self._sleep = sleep
        self._semaphore = threading.Semaphore(cfg.concurrency_limit)
        headers = {}
        api_key = os.environ.get(cfg.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            base_url=cfg.base_url.rstrip("/"),
            headers=headers,
            timeout=cfg.request_timeout_s,
            transport=transport,
        )

    @property
    def model_name(self) -> str:
        return self.cfg.model_name

    def complete(self, messages: Sequence[dict]) -> str:
        body = {
            "model": self.cfg.model_name,
            "messages": list(messages),
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
        }
        last_error: Optional[Exception] = None
        with self._semaphore:
            for attempt in range(self.cfg.max_retries + 1):
                if attempt:
                    self._sleep(0.5 * 2 ** (attempt - 1))
                try:
                    resp = self._client.post("/chat/completions", json=body)
                except httpx.HTTPError as exc:
                    last_error = exc
                    continue
                if resp.status_code in _RETRYABLE_STATUS:
                    last_error = ChatTransportError(f"HTTP {resp.status_code}")
                    continue
                if resp.status_code != 200:
                    raise ChatTransportError(f"HTTP {resp.status_code}: {resp.text[:300]}")
                return _extract_content(resp)
        raise ChatTransportError(f"retries exhausted: {last_error}")

    def close(self) -> None:
        self._client.close()


def _extract_content(resp: httpx.Response) -> str:
    try:
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ChatProtocolError(f"malformed completion response: {exc}") from exc
    if not isinstance(content, str):
        raise ChatProtocolError("completion content is not text")
    return content


class MockChatClient:
    """Deterministic stand-in for CI and offline runs.

    ``script`` is either a list of canned responses consumed in order or a
    callable mapping the messages array to a response. All requests are
    recorded for assertions.
    """

    def __init__(self, script, model_name: str = "mock-model"):
        self._script = script
        self._index = 0
        self._lock = threading.Lock()
        self.model_name = model_name
        self.requests: list[list[dict]] = []

    def complete(self, messages: Sequence[dict]) -> str:
        with self._lock:
            self.requests.append(list(messages))
            if callable(self._script):
                return self._script(list(messages))
            if self._index >= len(self._script):
                raise ChatTransportError("mock script exhausted")
            response = self._script[self._index]
            self._index += 1
        if isinstance(response, Exception):
            raise response
        return response

    def close(self) -> None:
        pass
