"""Completion providers: HTTP chat endpoint, Gemini, and a scripted stand-in."""

from __future__ import annotations

import logging
import re
import threading
import time
from pathlib import Path
from typing import Any, Callable, Protocol, TypeVar

import httpx
import yaml
from google.genai import errors as genai_errors
from pydantic import BaseModel, Field, ValidationError

from src.errors import (
    EmptyPromptError,
    HttpStatusError,
    IoError,
    MalformedResponseError,
    ProviderError,
    ProviderTimeoutError,
    ScriptExhausted,
    TransportError,
)
from src.gemini_client import GeminiClient

logger = logging.getLogger(__name__)

T = TypeVar("T")


class RetryPolicy(BaseModel):
    max_retries: int = Field(default=3, ge=1)
    backoff_base_seconds: float = Field(default=1.0, ge=0.0)
    backoff_factor: float = Field(default=2.0, ge=1.0)

    model_config = {"frozen": True}

    def delay(self, attempt: int) -> float:
        return self.backoff_base_seconds * (self.backoff_factor ** (attempt - 1))


class CompletionResponse(BaseModel):
    text: str
    attempts: int

    model_config = {"frozen": True}


class CompletionProvider(Protocol):
    name: str

    def complete(self, prompt: str) -> str: ...


def call_with_retries(
    operation: Callable[[], T],
    *,
    policy: RetryPolicy,
    sleep: Callable[[float], None] = time.sleep,
    describe: str = "request",
) -> tuple[T, int]:
    """Run ``operation`` until it succeeds or a non-retryable error occurs.

    Returns the result and the number of attempts used. Raised provider errors
    carry the attempt count.
    """
    for attempt in range(1, policy.max_retries + 1):
        try:
            return operation(), attempt
        except ProviderError as exc:
            exc.attempts = attempt
            if not exc.retryable or attempt == policy.max_retries:
                raise
            sleep_for = policy.delay(attempt)
            logger.warning(
                "%s failed (attempt %d/%d): %s; retrying in %.2fs",
                describe,
                attempt,
                policy.max_retries,
                exc.args[0],
                sleep_for,
            )
            sleep(sleep_for)
    raise AssertionError("unreachable")


def post_json(
    client: httpx.Client,
    url: str,
    payload: dict[str, Any],
    *,
    headers: dict[str, str] | None = None,
) -> dict[str, Any]:
    """POST once, translating transport failures into provider errors."""
    try:
        response = client.post(url, json=payload, headers=headers)
    except httpx.TimeoutException as exc:
        raise ProviderTimeoutError(f"timeout calling {url}", cause=exc) from exc
    except httpx.HTTPError as exc:
        raise TransportError(f"transport error calling {url}: {exc}", cause=exc) from exc

    if response.status_code >= 400:
        raise HttpStatusError(response.status_code, response.text[:200])
    try:
        data = response.json()
    except ValueError as exc:
        raise MalformedResponseError("response body is not JSON", cause=exc) from exc
    if not isinstance(data, dict):
        raise MalformedResponseError("response body is not a JSON object")
    return data


def bearer_headers(api_key: str | None) -> dict[str, str]:
    return {"Authorization": f"Bearer {api_key}"} if api_key else {}


def complete(provider: CompletionProvider, prompt: str) -> str:
    if not prompt.strip():
        raise EmptyPromptError("prompt must be non-empty")
    return provider.complete(prompt)


class HttpChatProvider:
    """OpenAI-compatible ``/chat/completions`` client.

    When a prompt starts with ``system_prompt`` that prefix goes out as the
    system message and the remainder as the user message.
    """

    def __init__(
        self,
        *,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        timeout_seconds: float = 30.0,
        temperature: float = 0.0,
        system_prompt: str | None = None,
        policy: RetryPolicy | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.name = f"http:{model}"
        self.system_prompt = system_prompt.strip() if system_prompt else None
        self.url = endpoint.rstrip("/") + "/chat/completions"
        self.model = model
        self.temperature = temperature
        self.policy = policy or RetryPolicy()
        self._headers = bearer_headers(api_key)
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout_seconds, transport=transport)

    def messages(self, prompt: str) -> list[dict[str, str]]:
        system = self.system_prompt
        if system and prompt.startswith(system):
            rest = prompt[len(system) :].strip()
            if rest:
                return [
                    {"role": "system", "content": system},
                    {"role": "user", "content": rest},
                ]
        return [{"role": "user", "content": prompt}]

    def _payload(self, prompt: str) -> dict[str, Any]:
        return {
            "model": self.model,
            "messages": self.messages(prompt),
            "temperature": self.temperature,
        }

    def _request_once(self, prompt: str) -> str:
        data = post_json(self._client, self.url, self._payload(prompt), headers=self._headers)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(
                "response has no choices[0].message.content", cause=exc
            ) from exc
        if not isinstance(content, str):
            raise MalformedResponseError("message content is not a string")
        return content

    def request(self, prompt: str) -> CompletionResponse:
        text, attempts = call_with_retries(
            lambda: self._request_once(prompt),
            policy=self.policy,
            sleep=self._sleep,
            describe=f"chat completion ({self.model})",
        )
        return CompletionResponse(text=text, attempts=attempts)

    def complete(self, prompt: str) -> str:
        return self.request(prompt).text

    def close(self) -> None:
        self._client.close()


class GeminiProvider:
    def __init__(
        self,
        gemini: GeminiClient,
        *,
        policy: RetryPolicy | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.name = f"gemini:{gemini.model}"
        self.gemini = gemini
        self.policy = policy or RetryPolicy()
        self._sleep = sleep

    def _request_once(self, prompt: str) -> str:
        try:
            return self.gemini.generate(prompt)
        except genai_errors.APIError as exc:
            raise HttpStatusError(int(exc.code or 0), str(exc.message or "")) from exc
        except Exception as exc:  # noqa: BLE001 - SDK transport boundary
            raise TransportError(f"gemini request failed: {exc}", cause=exc) from exc

    def complete(self, prompt: str) -> str:
        text, _ = call_with_retries(
            lambda: self._request_once(prompt),
            policy=self.policy,
            sleep=self._sleep,
            describe=f"gemini completion ({self.gemini.model})",
        )
        return text


# --- scripted provider -----------------------------------------------------

_FENCED_BLOCK = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


class ScriptRule(BaseModel):
    """Answer prompts matching ``match`` (a regex searched in the prompt).

    ``response`` is returned verbatim. With ``echo`` set instead, the reply is
    the first fenced code block after the ``echo`` heading in the prompt.
    ``times`` limits how often the rule may fire.
    """

    match: str
    response: str | None = None
    echo: str | None = None
    times: int | None = Field(default=None, ge=1)

    model_config = {"frozen": True}

    def answer(self, prompt: str) -> str | None:
        if re.search(self.match, prompt, re.MULTILINE) is None:
            return None
        if self.echo is None:
            return self.response or ""
        start = prompt.find(self.echo)
        if start == -1:
            return None
        block = _FENCED_BLOCK.search(prompt, start)
        return block.group(1) if block else None


class Script(BaseModel):
    rules: list[ScriptRule] = Field(default_factory=list)
    strict: bool = False
    default_response: str = ""

    model_config = {"frozen": True}


class ScriptedProvider:
    """Deterministic provider answering from an ordered rule list."""

    def __init__(self, script: Script, *, name: str = "scripted") -> None:
        self.name = name
        self.script = script
        self._uses = [0] * len(script.rules)
        self._lock = threading.Lock()
        self.prompts: list[str] = []

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.prompts.append(prompt)
            for index, rule in enumerate(self.script.rules):
                if rule.times is not None and self._uses[index] >= rule.times:
                    continue
                answer = rule.answer(prompt)
                if answer is None:
                    continue
                self._uses[index] += 1
                return answer
        if self.script.strict:
            tail = prompt.strip().splitlines()[-1] if prompt.strip() else ""
            raise ScriptExhausted(f"no script rule matches prompt ending {tail!r}")
        logger.debug("No script rule matched; returning default response")
        return self.script.default_response


def load_script(path: Path) -> Script:
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(path, exc) from exc
    except yaml.YAMLError as exc:
        raise RuntimeError(f"Invalid YAML in {path}: {exc}") from exc
    try:
        return Script.model_validate(raw or {})
    except ValidationError as exc:
        raise RuntimeError(f"Invalid provider script {path}:\n{exc}") from exc
