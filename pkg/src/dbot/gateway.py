"""Model gateway: every completion and embedding call goes through here.

Two backends are provided. :class:`ScriptedBackend` answers from an ordered
list of rules and embeds text with a seeded character n-gram hash, which makes
the whole pipeline reproducible offline. :class:`HttpBackend` talks to an
OpenAI-compatible chat-completions endpoint configured through environment
variables.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

ENV_ENDPOINT = "DBOT_LLM_ENDPOINT"
ENV_KEY = "DBOT_LLM_KEY"
ENV_MODEL = "DBOT_LLM_MODEL"

DEFAULT_DIM = 64


class GatewayError(Exception):
    """Base class for model-call failures."""


class NoMatchingRule(GatewayError):
    pass


class EndpointUnavailable(GatewayError):
    pass


class TokenLimitExceeded(GatewayError):
    pass


class EmptyText(ValueError):
    pass


@dataclass(frozen=True)
class PromptRequest:
    messages: tuple[tuple[str, str], ...]
    role_preamble: str = ""
    temperature: float = 0.0
    max_tokens: int = 1024

    def __post_init__(self):
        if not self.messages:
            raise ValueError("PromptRequest needs at least one message")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature must be in [0, 1], got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")
        object.__setattr__(self, "messages", tuple((str(s), str(t)) for s, t in self.messages))

    @classmethod
    def user(cls, text: str, role_preamble: str = "", **kw) -> PromptRequest:
        return cls(messages=(("user", text),), role_preamble=role_preamble, **kw)

    def render(self) -> str:
        """Flatten the request into the single string rules are matched against."""
        parts = [self.role_preamble] if self.role_preamble else []
        parts.extend(f"{speaker}: {text}" for speaker, text in self.messages)
        return "\n\n".join(parts)


@dataclass(frozen=True)
class Completion:
    text: str
    finish_reason: str = "complete"  # complete | truncated | error
    token_count: int = 0

    @property
    def ok(self) -> bool:
        return self.finish_reason != "error"


def count_tokens(text: str) -> int:
    return len(text.split())


def _truncate_words(text: str, limit: int) -> tuple[str, bool]:
    words = text.split()
    if len(words) <= limit:
        return text, False
    return " ".join(words[:limit]), True


# ---------------------------------------------------------------------------
# Scripted backend
# ---------------------------------------------------------------------------


@dataclass
class ScriptedRule:
    """A canned response selected when ``matcher`` occurs in the rendered prompt.

    With ``regex=True`` the matcher is a regular expression (DOTALL) and the
    response may refer to its groups (``\\1``, ``\\g<name>``).
    """

    matcher: str
    response: str
    max_uses: int | None = None
    regex: bool = False
    uses: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.max_uses is not None and self.max_uses < 1:
            raise ValueError("max_uses must be a positive integer")
        self._pattern = re.compile(self.matcher, re.DOTALL) if self.regex else None

    @property
    def exhausted(self) -> bool:
        return self.max_uses is not None and self.uses >= self.max_uses

    def match(self, prompt: str) -> str | None:
        if self._pattern is not None:
            m = self._pattern.search(prompt)
            return m.expand(self.response) if m else None
        return self.response if self.matcher in prompt else None


def load_rules(source: str | Path | Iterable[dict]) -> list[ScriptedRule]:
    """Read rules from a JSON file (or an already-parsed list of dicts)."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            source = json.load(fh)
    rules = []
    for i, entry in enumerate(source):
        if "matcher" not in entry or "response" not in entry:
            raise ValueError(f"rule {i} needs 'matcher' and 'response'")
        rules.append(
            ScriptedRule(
                matcher=entry["matcher"],
                response=entry["response"],
                max_uses=entry.get("max_uses"),
                regex=bool(entry.get("regex", False)),
            )
        )
    return rules


def hash_embedding(text: str, dim: int = DEFAULT_DIM, seed: int = 0, n: int = 3) -> np.ndarray:
    """Fold character n-grams of ``text`` into ``dim`` buckets and L2-normalise."""
    if not text or not text.strip():
        raise EmptyText("cannot embed empty text")
    padded = f" {' '.join(text.lower().split())} "
    grams = [padded[i : i + n] for i in range(max(1, len(padded) - n + 1))]
    key = seed.to_bytes(8, "little", signed=True)
    vec = np.zeros(dim)
    for g in grams:
        digest = hashlib.blake2b(g.encode("utf-8"), digest_size=8, key=key).digest()
        vec[int.from_bytes(digest, "little") % dim] += 1.0
    return vec / np.linalg.norm(vec)


class ScriptedBackend:
    """Deterministic backend: first matching rule wins, in declaration order."""

    def __init__(self, rules: Sequence[ScriptedRule] = (), dim: int = DEFAULT_DIM, seed: int = 0):
        self.rules = list(rules)
        self.dim = dim
        self.seed = seed
        self.prompts: list[str] = []
        self._lock = threading.Lock()

    def complete(self, request: PromptRequest) -> Completion:
        prompt = request.render()
        with self._lock:
            self.prompts.append(prompt)
            for rule in self.rules:
                if rule.exhausted:
                    continue
                response = rule.match(prompt)
                if response is not None:
                    rule.uses += 1
                    break
            else:
                head = " ".join(prompt.split())[:80]
                raise NoMatchingRule(f"no scripted rule matches prompt starting {head!r}")
        text, truncated = _truncate_words(response, request.max_tokens)
        return Completion(text, "truncated" if truncated else "complete", count_tokens(text))

    def embed(self, text: str) -> np.ndarray:
        return hash_embedding(text, self.dim, self.seed)


# ---------------------------------------------------------------------------
# HTTP backend
# ---------------------------------------------------------------------------

_TRANSIENT = {408, 429, 500, 502, 503, 504}


class HttpBackend:
    """OpenAI-compatible chat-completions client with retry on transient errors."""

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        model: str | None = None,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
    ):
        self.endpoint = (endpoint or os.environ.get(ENV_ENDPOINT, "")).rstrip("/")
        if not self.endpoint:
            raise EndpointUnavailable(f"set {ENV_ENDPOINT} to use the HTTP backend")
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_KEY, "")
        self.model = model or os.environ.get(ENV_MODEL, "gpt-4-0613")
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout

    def _post(self, path: str, payload: dict) -> dict:
        body = json.dumps(payload).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last: Exception | None = None
        for attempt in range(self.retries):
            req = urllib.request.Request(self.endpoint + path, data=body, headers=headers)
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except urllib.error.HTTPError as exc:
                detail = exc.read().decode("utf-8", "replace")
                if exc.code == 400 and "context_length" in detail:
                    raise TokenLimitExceeded(detail) from exc
                if exc.code not in _TRANSIENT:
                    raise EndpointUnavailable(f"HTTP {exc.code}: {detail[:200]}") from exc
                last = exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last = exc
            if attempt + 1 < self.retries:
                time.sleep(self.backoff * 2**attempt)
        raise EndpointUnavailable(f"{self.endpoint}{path} failed after {self.retries} attempts: {last}")

    def complete(self, request: PromptRequest) -> Completion:
        messages = []
        if request.role_preamble:
            messages.append({"role": "system", "content": request.role_preamble})
        for speaker, text in request.messages:
            role = speaker if speaker in ("system", "user", "assistant") else "user"
            messages.append({"role": role, "content": text})
        data = self._post(
            "/chat/completions",
            {
                "model": self.model,
                "messages": messages,
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
            },
        )
        choice = data["choices"][0]
        text = choice["message"].get("content") or ""
        reason = "truncated" if choice.get("finish_reason") == "length" else "complete"
        tokens = data.get("usage", {}).get("completion_tokens", count_tokens(text))
        return Completion(text, reason, tokens)

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmptyText("cannot embed empty text")
        data = self._post("/embeddings", {"model": self.model, "input": text})
        vec = np.asarray(data["data"][0]["embedding"], dtype=float)
        return vec / np.linalg.norm(vec)


# ---------------------------------------------------------------------------
# Gateway facade
# ---------------------------------------------------------------------------


class Gateway:
    """Front door for model calls.

    ``complete`` never raises for backend failures; it returns a Completion
    with ``finish_reason='error'`` and a diagnostic text so callers can record
    the failure and carry on. Embeddings are cached per text.
    """

    def __init__(self, backend, default_max_tokens: int = 1024):
        self.backend = backend
        self.default_max_tokens = default_max_tokens
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    @classmethod
    def scripted(cls, rules=(), dim: int = DEFAULT_DIM, seed: int = 0) -> Gateway:
        if isinstance(rules, (str, Path)):
            rules = load_rules(rules)
        elif rules and isinstance(rules[0], dict):
            rules = load_rules(rules)
        return cls(ScriptedBackend(rules, dim=dim, seed=seed))

    @classmethod
    def from_env(cls) -> Gateway:
        return cls(HttpBackend())

    def complete(self, request: PromptRequest) -> Completion:
        try:
            return self.backend.complete(request)
        except GatewayError as exc:
            log.debug("model call failed: %s", exc)
            return Completion(str(exc), "error", 0)

    def ask(self, text: str, role_preamble: str = "", max_tokens: int | None = None) -> Completion:
        return self.complete(
            PromptRequest.user(text, role_preamble, max_tokens=max_tokens or self.default_max_tokens)
        )

    def embed(self, text: str) -> np.ndarray:
        with self._lock:
            hit = self._cache.get(text)
        if hit is not None:
            return hit
        vec = self.backend.embed(text)
        vec.setflags(write=False)
        with self._lock:
            self._cache[text] = vec
        return vec


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise EmptyText("cosine of a zero vector is undefined")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))
