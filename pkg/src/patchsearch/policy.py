"""Generation-backend contract: dual-mode output, token logprobs, scripted and remote backends."""

from __future__ import annotations

import json
import logging
import math
import os
import threading
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence

log = logging.getLogger(__name__)

THINKING = "thinking"
NON_THINKING = "non_thinking"

FINISH_STOP = "stop"
FINISH_LENGTH = "length"
FINISH_ERROR = "error"

DEFAULT_OPENER = "<think>"
DEFAULT_CLOSER = "</think>"

AUTH_TOKEN_ENV = "PATCHSEARCH_API_TOKEN"

_transport_lock = threading.Lock()
_transport_calls = 0


def transport_call_count() -> int:
    """Number of real network requests attempted since the last reset."""
    return _transport_calls


def reset_transport_counter() -> None:
    global _transport_calls
    with _transport_lock:
        _transport_calls = 0


def _count_transport_call() -> None:
    global _transport_calls
    with _transport_lock:
        _transport_calls += 1


class ScriptError(Exception):
    """Malformed mock script file or exhausted script in error mode."""


@dataclass(frozen=True)
class TokenLogProbs:
    token: str
    logprob: float
    alternatives: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.logprob > 0:
            raise ValueError(f"logprob must be <= 0, got {self.logprob}")
        mass = sum(math.exp(lp) for _, lp in self.alternatives)
        if mass > 1.0 + 1e-6:
            raise ValueError(f"alternative probabilities sum to {mass} > 1")


@dataclass(frozen=True)
class GenRequest:
    prompt: str
    mode: str = NON_THINKING
    temperature: float = 0.6
    top_p: float = 0.95
    max_units: int = 512
    want_logprobs: bool = False
    top_alternatives: int = 20
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in (THINKING, NON_THINKING):
            raise ValueError(f"unknown mode: {self.mode!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class GenResponse:
    answer: str
    reasoning: str | None = None
    tokens: tuple[TokenLogProbs, ...] | None = None
    finish: str = FINISH_STOP


class Backend(Protocol):
    def complete(self, request: GenRequest) -> GenResponse: ...


def split_reasoning(
    raw: str,
    opener: str = DEFAULT_OPENER,
    closer: str = DEFAULT_CLOSER,
) -> tuple[str, str]:
    """Split combined output into (reasoning, answer) at the last closing delimiter.

    Without a closer the whole text is the answer and the reasoning is empty.
    """
    idx = raw.rfind(closer)
    if idx < 0:
        return "", raw
    head = raw[:idx]
    stripped = head.lstrip()
    if stripped.startswith(opener):
        head = stripped[len(opener) :]
    reasoning = head.strip("\n")
    answer = raw[idx + len(closer) :].lstrip("\n")
    return reasoning, answer


def generate(request: GenRequest, backend: Backend) -> GenResponse:
    """Run one generation, normalizing the dual-mode contract.

    Thinking mode splits a combined reply into trace and answer; non-thinking
    mode never surfaces a reasoning field and the answer never carries trace
    delimiters.
    """
    response = backend.complete(request)
    if response.finish == FINISH_ERROR:
        return response
    if request.mode == THINKING:
        if response.reasoning is None:
            reasoning, answer = split_reasoning(response.answer)
            response = replace(response, answer=answer, reasoning=reasoning or None)
    else:
        _, answer = split_reasoning(response.answer)
        response = replace(response, answer=answer, reasoning=None)
    if not request.want_logprobs:
        response = replace(response, tokens=None)
    return response


# ---------------------------------------------------------------------------
# Scripted backend


@dataclass(frozen=True)
class ScriptEntry:
    answer: str
    reasoning: str | None = None
    tokens: tuple[TokenLogProbs, ...] | None = None


def _parse_tokens(payload: Sequence[dict]) -> tuple[TokenLogProbs, ...]:
    tokens = []
    for item in payload:
        alts = tuple((str(t), float(lp)) for t, lp in item.get("alternatives", []))
        tokens.append(TokenLogProbs(token=str(item["token"]), logprob=float(item["logprob"]), alternatives=alts))
    return tuple(tokens)


def load_script(path: str | Path) -> list[ScriptEntry]:
    """Load a line-delimited mock script; any malformed record is a load-time error."""
    entries: list[ScriptEntry] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            tokens = _parse_tokens(record["tokens"]) if record.get("tokens") else None
            entries.append(
                ScriptEntry(answer=str(record["answer"]), reasoning=record.get("reasoning"), tokens=tokens)
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ScriptError(f"{path}:{lineno}: bad script record: {exc}") from exc
    if not entries:
        raise ScriptError(f"{path}: script is empty")
    return entries


class ScriptedBackend:
    """Deterministic backend replaying a fixed reply list.

    Replies are consumed in order; exhaustion either wraps around or raises,
    per ``exhausted``. Logprob tables are replayed verbatim.
    """

    def __init__(self, entries: Sequence[ScriptEntry], exhausted: str = "error"):
        if not entries:
            raise ScriptError("script must be nonempty")
        if exhausted not in ("error", "wrap"):
            raise ValueError(f"exhausted must be 'error' or 'wrap', got {exhausted!r}")
        self._entries = list(entries)
        self._exhausted = exhausted
        self._lock = threading.Lock()
        self._cursor = 0
        self.call_count = 0

    @classmethod
    def from_file(cls, path: str | Path, exhausted: str = "error") -> "ScriptedBackend":
        return cls(load_script(path), exhausted=exhausted)

    def complete(self, request: GenRequest) -> GenResponse:
        with self._lock:
            if self._cursor >= len(self._entries):
                if self._exhausted == "error":
                    raise ScriptError("script exhausted")
                self._cursor = 0
            entry = self._entries[self._cursor]
            self._cursor += 1
            self.call_count += 1
        tokens = entry.tokens if request.want_logprobs else None
        return GenResponse(answer=entry.answer, reasoning=entry.reasoning, tokens=tokens)


# ---------------------------------------------------------------------------
# Remote backend


class RemoteBackend:
    """HTTP backend speaking the common open completion API shape.

    Any local inference server exposing ``POST {endpoint}`` with prompt,
    temperature, top_p, max_tokens and logprobs fields can stand in. The auth
    token is read from the environment, never from config files.
    """

    def __init__(
        self,
        endpoint: str,
        model: str | None = None,
        timeout: float = 30.0,
        retries: int = 2,
    ):
        self.endpoint = endpoint
        self.model = model
        self.timeout = timeout
        self.retries = retries

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(AUTH_TOKEN_ENV)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, request: GenRequest) -> GenResponse:
        import requests

        payload: dict = {
            "prompt": request.prompt,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_units,
        }
        if self.model:
            payload["model"] = self.model
        if request.want_logprobs:
            payload["logprobs"] = request.top_alternatives
        if request.seed is not None:
            payload["seed"] = request.seed

        last_error: Exception | None = None
        for _ in range(self.retries + 1):
            _count_transport_call()
            try:
                resp = requests.post(self.endpoint, json=payload, headers=self._headers(), timeout=self.timeout)
                resp.raise_for_status()
                return self._parse(resp.json())
            except Exception as exc:  # noqa: BLE001 - transport failures map to finish=error
                last_error = exc
        log.warning("remote backend failed after %d attempts: %s", self.retries + 1, last_error)
        return GenResponse(answer="", finish=FINISH_ERROR)

    @staticmethod
    def _parse(body: dict) -> GenResponse:
        choice = body["choices"][0]
        answer = choice.get("text", "")
        finish = choice.get("finish_reason", FINISH_STOP)
        if finish not in (FINISH_STOP, FINISH_LENGTH):
            finish = FINISH_STOP
        tokens = None
        lp = choice.get("logprobs")
        if lp and lp.get("tokens"):
            items = []
            top = lp.get("top_logprobs") or [None] * len(lp["tokens"])
            for tok, tok_lp, alts in zip(lp["tokens"], lp["token_logprobs"], top):
                alternatives = tuple((str(t), float(v)) for t, v in (alts or {}).items())
                items.append(TokenLogProbs(token=tok, logprob=min(float(tok_lp), 0.0), alternatives=alternatives))
            tokens = tuple(items)
        return GenResponse(answer=answer, tokens=tokens, finish=finish)

    def embed_values(self, text: str) -> list[float]:
        """Fetch an embedding over the same transport; raises on failure."""
        import requests

        _count_transport_call()
        resp = requests.post(
            self.endpoint.rstrip("/") + "/embeddings",
            json={"input": text},
            headers=self._headers(),
            timeout=self.timeout,
        )
        resp.raise_for_status()
        return [float(v) for v in resp.json()["data"][0]["embedding"]]
