"""Uniform access to text-completion backends: HTTP (OpenAI-compatible) and a
script-driven mock, with on-disk caching, retries, and a shared rate limiter."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import requests

from .errors import AuthError, InvalidRequest, QapoolError, RateLimitError, TransportError

logger = logging.getLogger(__name__)

KIND_HTTP = "http_openai_compatible"
KIND_MOCK = "mock"

FINISH_STOP = "stop"
FINISH_LENGTH = "length"
FINISH_ERROR = "error"

_BIAS_MIN, _BIAS_MAX = -100.0, 100.0
_RATE_WINDOW_SECONDS = 60.0


class MockScenarioMiss(QapoolError):
    """The mock scenario has no rule for a prompt and no default response."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_tokens: int = 100
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] = ()
    token_bias: Mapping[int, float] = field(default_factory=dict)
    seed: int | None = None  # consumed by the mock backend only

    def validate(self) -> None:
        if not self.prompt:
            raise InvalidRequest("prompt is empty")
        if self.max_tokens < 1:
            raise InvalidRequest(f"max_tokens must be positive, got {self.max_tokens}")
        if self.temperature < 0:
            raise InvalidRequest(f"temperature must be >= 0, got {self.temperature}")
        if len(self.stop_sequences) > 4:
            raise InvalidRequest("at most 4 stop sequences allowed")
        if any(not s for s in self.stop_sequences):
            raise InvalidRequest("stop sequences must be non-empty")
        for token_id, bias in self.token_bias.items():
            if not _BIAS_MIN <= bias <= _BIAS_MAX:
                raise InvalidRequest(
                    f"token bias for id {token_id} is {bias}, outside [{_BIAS_MIN}, {_BIAS_MAX}]"
                )


@dataclass(frozen=True)
class CompletionResult:
    text: str
    finish_reason: str = FINISH_STOP
    cached: bool = False


@dataclass(frozen=True)
class BackendConfig:
    kind: str = KIND_MOCK
    model_id: str = "mock-model"
    base_url: str | None = None
    api_key_env: str = "QAPOOL_API_KEY"
    max_retries: int = 3
    requests_per_minute: int = 60
    cache_dir: str = ".qapool-cache"
    scenario_path: str | None = None
    # mock only: substring bans for token ids carrying a -100 bias
    ban_strings: tuple[tuple[str, int], ...] = ()
    backoff_base: float = 0.5
    request_timeout: float = 60.0

    def validate(self) -> None:
        if self.kind not in (KIND_HTTP, KIND_MOCK):
            raise InvalidRequest(f"unknown backend kind {self.kind!r}")
        if self.kind == KIND_HTTP and not self.base_url:
            raise InvalidRequest("http backend requires base_url")
        if self.max_retries < 0:
            raise InvalidRequest("max_retries must be >= 0")
        if self.requests_per_minute < 1:
            raise InvalidRequest("requests_per_minute must be positive")


def cache_key(request: CompletionRequest, model_id: str) -> str:
    """Stable digest of the canonicalized request plus model id."""
    payload = {
        "model": model_id,
        "prompt": request.prompt,
        "max_tokens": int(request.max_tokens),
        "temperature": float(request.temperature),
        "stop_sequences": list(request.stop_sequences),
        "token_bias": {str(k): float(request.token_bias[k]) for k in sorted(request.token_bias)},
        "seed": request.seed,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class RateLimiter:
    """Sliding-window limiter: at most `per_minute` grants in any 60 s span.

    A plain token bucket with refill would admit up to twice the budget inside
    a single window, so the window log is kept explicitly.
    """

    def __init__(self, per_minute: int, clock=time.monotonic, sleep=time.sleep):
        self._per_minute = per_minute
        self._clock = clock
        self._sleep = sleep
        self._grants: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._grants and now - self._grants[0] >= _RATE_WINDOW_SECONDS:
                    self._grants.popleft()
                if len(self._grants) < self._per_minute:
                    self._grants.append(now)
                    return
                wait = self._grants[0] + _RATE_WINDOW_SECONDS - now
            self._sleep(max(wait, 0.0))


@dataclass(frozen=True)
class _ScenarioRule:
    prefix: str | None = None
    suffix: str | None = None
    contains: str | None = None
    responses: tuple[str, ...] = ("",)

    def match_score(self, prompt: str) -> int | None:
        score = 0
        if self.prefix is not None:
            if not prompt.startswith(self.prefix):
                return None
            score += len(self.prefix)
        if self.suffix is not None:
            if not prompt.endswith(self.suffix):
                return None
            score += len(self.suffix)
        if self.contains is not None:
            if self.contains not in prompt:
                return None
            score += len(self.contains)
        return score


class MockScenario:
    """Pattern → response table driving the mock backend.

    File shape: {"rules": [{"prefix"/"suffix"/"contains": ..., "response": ...
    or "responses": [...]}, ...], "default_response": optional}. The rule with
    the longest total matched pattern wins; ties go to the earliest rule.
    """

    def __init__(self, rules: list[_ScenarioRule], default_response: str | None = None):
        self.rules = rules
        self.default_response = default_response
        # prompts fully covered by a prefix rule resolve via dict lookup
        self._exact = {
            r.prefix: r for r in rules if r.prefix is not None and r.suffix is None and r.contains is None
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MockScenario":
        rules = []
        for i, raw in enumerate(data.get("rules", [])):
            if "response" in raw:
                responses: tuple[str, ...] = (str(raw["response"]),)
            elif "responses" in raw and raw["responses"]:
                responses = tuple(str(r) for r in raw["responses"])
            else:
                raise InvalidRequest(f"scenario rule {i} has no response(s)")
            if not any(k in raw for k in ("prefix", "suffix", "contains")):
                raise InvalidRequest(f"scenario rule {i} has no pattern")
            rules.append(
                _ScenarioRule(
                    prefix=raw.get("prefix"),
                    suffix=raw.get("suffix"),
                    contains=raw.get("contains"),
                    responses=responses,
                )
            )
        return cls(rules, data.get("default_response"))

    @classmethod
    def load(cls, path) -> "MockScenario":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def lookup(self, prompt: str) -> _ScenarioRule | None:
        exact = self._exact.get(prompt)
        if exact is not None:
            return exact
        best: _ScenarioRule | None = None
        best_score = -1
        for rule in self.rules:
            score = rule.match_score(prompt)
            if score is not None and score > best_score:
                best, best_score = rule, score
        return best


def _excise_word(text: str, word: str) -> str:
    pattern = re.compile(rf"(?<!\w){re.escape(word)}(?!\w)", re.IGNORECASE)
    text = pattern.sub("", text)
    return re.sub(r"[ \t]{2,}", " ", text)


def _truncate_words(text: str, limit: int) -> tuple[str, bool]:
    spans = [m.span() for m in re.finditer(r"\S+", text)]
    if len(spans) <= limit:
        return text, False
    return text[: spans[limit - 1][1]], True


def _apply_stop(text: str, stop_sequences: tuple[str, ...]) -> tuple[str, bool]:
    cut = len(text)
    for stop in stop_sequences:
        idx = text.find(stop)
        if idx != -1:
            cut = min(cut, idx)
    return text[:cut], cut < len(text)


def _default_transport(url: str, payload: dict, headers: dict, timeout: float):
    resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    try:
        body = resp.json()
    except ValueError:
        body = None
    return resp.status_code, body


class Gateway:
    """One backend plus its cache and rate limiter; safe for concurrent use."""

    def __init__(
        self,
        config: BackendConfig,
        *,
        transport: Callable | None = None,
        clock=time.monotonic,
        sleep=time.sleep,
    ):
        config.validate()
        self.config = config
        self._transport = transport or _default_transport
        self._sleep = sleep
        self._limiter = RateLimiter(config.requests_per_minute, clock=clock, sleep=sleep)
        self._cache_root = Path(config.cache_dir) / config.kind
        self._lock = threading.Lock()
        self._scenario: MockScenario | None = None
        if config.kind == KIND_MOCK and config.scenario_path:
            self._scenario = MockScenario.load(config.scenario_path)
        self.backend_calls = 0  # non-cached backend invocations, incl. retries

    # -- cache ------------------------------------------------------------

    def _cache_path(self, key: str) -> Path:
        return self._cache_root / f"{key}.json"

    def _cache_read(self, key: str) -> CompletionResult | None:
        path = self._cache_path(key)
        try:
            with open(path, encoding="utf-8") as fh:
                record = json.load(fh)
            response = record["response"]
            return CompletionResult(
                text=response["text"], finish_reason=response["finish_reason"], cached=True
            )
        except (OSError, KeyError, ValueError, TypeError):
            return None

    def _cache_write(self, key: str, request: CompletionRequest, result: CompletionResult) -> None:
        self._cache_root.mkdir(parents=True, exist_ok=True)
        record = {
            "key": key,
            "kind": self.config.kind,
            "model_id": self.config.model_id,
            "request": {
                "prompt": request.prompt,
                "max_tokens": request.max_tokens,
                "temperature": request.temperature,
                "stop_sequences": list(request.stop_sequences),
                "token_bias": {str(k): v for k, v in sorted(request.token_bias.items())},
                "seed": request.seed,
            },
            "response": {"text": result.text, "finish_reason": result.finish_reason},
        }
        path = self._cache_path(key)
        tmp = path.with_name(f"{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
        tmp.write_text(json.dumps(record, ensure_ascii=False, indent=1), encoding="utf-8")
        os.replace(tmp, path)  # concurrent writers: identical content, last one wins

    # -- backends ----------------------------------------------------------

    def _mock_complete(self, request: CompletionRequest) -> CompletionResult:
        scenario = self._scenario
        if scenario is None:
            raise InvalidRequest("mock backend has no scenario configured")
        rule = scenario.lookup(request.prompt)
        if rule is None:
            if scenario.default_response is None:
                raise MockScenarioMiss(f"no scenario rule matches: {request.prompt[:120]!r}")
            text = scenario.default_response
        else:
            text = rule.responses[(request.seed or 0) % len(rule.responses)]
        for banned, token_id in self.config.ban_strings:
            if request.token_bias.get(token_id, 0.0) <= _BIAS_MIN:
                text = _excise_word(text, banned)
        text, stopped = _apply_stop(text, request.stop_sequences)
        if not stopped:
            text, truncated = _truncate_words(text, request.max_tokens)
            if truncated:
                return CompletionResult(text=text, finish_reason=FINISH_LENGTH)
        return CompletionResult(text=text, finish_reason=FINISH_STOP)

    def _http_complete(self, request: CompletionRequest) -> CompletionResult:
        api_key = os.environ.get(self.config.api_key_env)
        if not api_key:
            raise AuthError(f"environment variable {self.config.api_key_env} is not set")
        url = self.config.base_url.rstrip("/") + "/completions"
        payload: dict = {
            "model": self.config.model_id,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        if request.token_bias:
            payload["logit_bias"] = {str(k): v for k, v in request.token_bias.items()}
        headers = {"Authorization": f"Bearer {api_key}"}

        last_error = "transport"
        last_detail = ""
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
            self._limiter.acquire()
            with self._lock:
                self.backend_calls += 1
            try:
                status, body = self._transport(url, payload, headers, self.config.request_timeout)
            except requests.RequestException as exc:
                last_error, last_detail = "transport", str(exc)
                logger.warning("transport failure (attempt %d): %s", attempt + 1, exc)
                continue
            if status in (401, 403):
                raise AuthError(f"backend rejected credentials (HTTP {status})")
            if status == 429:
                last_error, last_detail = "rate", f"HTTP {status}"
                continue
            if status >= 500:
                last_error, last_detail = "transport", f"HTTP {status}"
                continue
            if status != 200:
                raise TransportError(f"backend returned HTTP {status}")
            try:
                choice = body["choices"][0]
                text = choice["text"]
            except (KeyError, IndexError, TypeError):
                raise TransportError("malformed completion response body")
            finish = choice.get("finish_reason") or FINISH_STOP
            if finish == FINISH_STOP:
                text, _ = _apply_stop(text, request.stop_sequences)
            return CompletionResult(text=text, finish_reason=finish)
        if last_error == "rate":
            raise RateLimitError(f"rate limited after {self.config.max_retries + 1} attempts")
        raise TransportError(
            f"transport failed after {self.config.max_retries + 1} attempts: {last_detail}"
        )

    # -- public ------------------------------------------------------------

    def complete(self, request: CompletionRequest) -> CompletionResult:
        request.validate()
        key = cache_key(request, self.config.model_id)
        cached = self._cache_read(key)
        if cached is not None:
            return cached
        if self.config.kind == KIND_HTTP:
            result = self._http_complete(request)
        else:
            with self._lock:
                self.backend_calls += 1
            result = self._mock_complete(request)
        self._cache_write(key, request, result)
        return result


_SHARED: dict[BackendConfig, Gateway] = {}
_SHARED_LOCK = threading.Lock()


def shared_gateway(config: BackendConfig) -> Gateway:
    """Process-wide gateway per config, so callers share one rate limiter."""
    with _SHARED_LOCK:
        gw = _SHARED.get(config)
        if gw is None:
            gw = Gateway(config)
            _SHARED[config] = gw
        return gw


def complete(request: CompletionRequest, config: BackendConfig) -> CompletionResult:
    return shared_gateway(config).complete(request)
