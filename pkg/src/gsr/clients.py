"""OpenAI-compatible chat-completion client plus offline stand-ins for CI."""
from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass
from typing import Callable, Protocol

import httpx

logger = logging.getLogger(__name__)

AUTH_ENV_VAR = "GSR_CHAT_API_KEY"


class ChatError(Exception):
    """The endpoint answered, but not usefully, after all retries."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ChatUnavailable(ChatError):
    """The endpoint could not be reached at all."""


@dataclass
class ChatReply:
    text: str
    prompt_chars: int
    response_chars: int
    usage: dict | None = None


class ChatClient(Protocol):
    def complete(self, prompt: str) -> ChatReply: ...


class OpenAIChatClient:
    """Minimal ``/chat/completions`` client with bounded exponential backoff.

    Retries on transport errors, 429 and 5xx. Other 4xx fail immediately.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        temperature: float = 0.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        timeout: float = 60.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.temperature = temperature
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        key = api_key if api_key is not None else os.environ.get(AUTH_ENV_VAR)
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._http = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def complete(self, prompt: str) -> ChatReply:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        delay = self.backoff
        last_status: int | None = None
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(delay)
                delay *= 2
            try:
                resp = self._http.post(self.url, json=payload)
            except httpx.TransportError as exc:
                last_exc, last_status = exc, None
                logger.warning("chat endpoint unreachable (attempt %d): %s", attempt + 1, exc)
                continue
            last_status = resp.status_code
            if resp.status_code == 429 or resp.status_code >= 500:
                logger.warning("chat endpoint returned %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ChatError(f"chat endpoint returned {resp.status_code}: {resp.text[:200]}", resp.status_code)
            body = resp.json()
            text = body["choices"][0]["message"].get("content") or ""
            return ChatReply(text, len(prompt), len(text), body.get("usage"))
        if last_status is None:
            raise ChatUnavailable(f"chat endpoint unreachable after {self.max_retries + 1} attempts: {last_exc}")
        raise ChatError(f"chat endpoint failed after {self.max_retries + 1} attempts", last_status)

    def close(self) -> None:
        self._http.close()


class FunctionChatClient:
    """Wraps ``prompt -> text`` so offline logic can sit behind the chat interface."""

    def __init__(self, fn: Callable[[str], str]):
        self.fn = fn
        self.calls = 0

    def complete(self, prompt: str) -> ChatReply:
        self.calls += 1
        text = self.fn(prompt)
        return ChatReply(text, len(prompt), len(text))


_NUMBERED = re.compile(r"^\s*(\d+):\s*(.*)$")


def repeat_rejecting_selector(prompt: str) -> str:
    """Mock chain selector: pick every listed chain with no repeated relation."""
    body = prompt.split("Paths:", 1)[1].split("Question:", 1)[0]
    keep = []
    for line in body.splitlines():
        m = _NUMBERED.match(line)
        if not m:
            continue
        rels = [tok.split(" (inverse)")[0].strip() for tok in m.group(2).split(" -- ")]
        if len(set(rels)) == len(rels):
            keep.append(m.group(1))
    return ", ".join(keep)


def terminal_echo_reader(prompt: str, max_answers: int = 3) -> str:
    """Mock reader: answer with the end entities of the first few context lines."""
    ctx = prompt.split("Question:", 1)[0]
    answers: list[str] = []
    for line in ctx.splitlines():
        line = line.strip()
        for prefix in ("Reasoning Paths:", "KG Triples:"):
            if line.startswith(prefix):
                line = line[len(prefix):].strip()
        if " -> " in line or " <- " in line:
            end = re.split(r" -> | <- ", line)[-1].strip()
        elif line.count(", ") >= 2 and not line.startswith("Based on"):
            end = line.rsplit(", ", 1)[-1].strip()
        else:
            continue
        if end and end not in answers:
            answers.append(end)
        if len(answers) >= max_answers:
            break
    return json.dumps(answers)
