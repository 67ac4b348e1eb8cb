"""LLM send/not-send filter: prompt construction, chat client, response parsing.

The live client speaks the OpenAI-style chat-completion wire format::

    POST <endpoint_url>
    {"model": "...", "messages": [{"role": "user", "content": "..."}], "temperature": 0}

and reads ``choices[0].message.content`` from the reply. For offline runs,
:func:`mock_oracle` stands in for the model.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import numpy as np

from .exceptions import ConfigurationError, ParameterError, TransportError

logger = logging.getLogger(__name__)

APP_DESCRIPTION = (
    "A mobile health app can send a message to the user to encourage the user to walk.\n"
    "The app can send no message (action 0), a generic message (action 1), "
    "a message tailored to context 0 (action 2) or a message tailored to context 1 (action 3).\n"
    "The user's walking step count is the reward."
)

DYNAMICS_SENTENCES = (
    "Sending a message causes the habituation level to increase.",
    "Not sending a message causes the habituation level to decrease.",
    "An incorrectly tailored message causes the disengagement risk to increase.",
    "A correctly tailored message causes the disengagement risk to decrease.",
)

QUESTION = (
    "Should the mobile health app send a message to the user? "
    "Answer 'send' or 'not send', then give a one-sentence reason."
)


@dataclass(frozen=True)
class StateRow:
    """One day of history as shown to the model.

    ``reward`` and ``action`` are what was observed on arriving at day ``t``
    (the previous day's executed action and its reward).
    """

    t: int
    c: int
    h: float
    d: float
    reward: float
    action: int

    def render(self):
        return (
            f"day {self.t}: context={self.c}, habituation={self.h:.3f}, "
            f"disengagement={self.d:.3f}, reward={self.reward:.1f}, "
            f"previous action={self.action}"
        )


@dataclass(frozen=True)
class PromptSpec:
    preference: str
    state_rows: tuple[StateRow, ...] = ()
    history_window: int = 4
    dynamics_description: str = APP_DESCRIPTION
    question: str = QUESTION

    def __post_init__(self):
        if self.history_window < 0:
            raise ParameterError("history_window must be >= 0")
        if not self.preference:
            raise ParameterError("a prompt needs a non-empty preference")
        object.__setattr__(self, "state_rows", tuple(self.state_rows))


def build_prompt(spec: PromptSpec) -> str:
    lines = [spec.dynamics_description, *DYNAMICS_SENTENCES]
    rows = spec.state_rows[-spec.history_window:] if spec.history_window else ()
    if rows:
        lines.append("The user current state and previous data:")
        lines.extend(row.render() for row in rows)
    lines.append(f'The user preference is "{spec.preference}".')
    lines.append(spec.question)
    return "\n".join(lines) + "\n"


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class Verdict(str, enum.Enum):
    SEND = "send"
    NOT_SEND = "not_send"
    UNPARSEABLE = "unparseable"


@dataclass(frozen=True)
class Decision:
    verdict: Verdict
    raw: str
    reason: str | None = None


_APOS = "['’]"
_NEGATED_SEND = re.compile(
    rf"\b(?:do\s+not|don{_APOS}?t|does\s+not|doesn{_APOS}?t|should\s+not|shouldn{_APOS}?t"
    rf"|will\s+not|won{_APOS}?t|must\s+not|never|not)\s+[\"'“‘]?(?:to\s+)?send\b",
    re.IGNORECASE,
)
_SEND = re.compile(r"\bsend\b", re.IGNORECASE)
_REASON_LEAD = re.compile(r"^[\s\"'”’.,:;!\-–—)]+")


def _reason_after(raw, end):
    reason = _REASON_LEAD.sub("", raw[end:]).strip()
    return reason or None


def parse_decision(raw: str) -> Decision:
    """Classify a free-text model reply.

    Negations win: every "not send" phrasing also contains "send", so a
    reply is NOT_SEND when a negated send appears before any bare "send".
    A bare "send" with no negation anywhere is SEND. Anything else,
    including an affirmation followed later by a negation, is UNPARSEABLE.
    """
    if not isinstance(raw, str):
        raw = "" if raw is None else str(raw)
    negations = list(_NEGATED_SEND.finditer(raw))
    negated_spans = [(m.start(), m.end()) for m in negations]
    affirmative = None
    for m in _SEND.finditer(raw):
        if not any(lo <= m.start() < hi for lo, hi in negated_spans):
            affirmative = m
            break

    if negations and (affirmative is None or negations[0].start() < affirmative.start()):
        first = negations[0]
        return Decision(Verdict.NOT_SEND, raw, _reason_after(raw, first.end()))
    if affirmative is not None and not negations:
        return Decision(Verdict.SEND, raw, _reason_after(raw, affirmative.end()))
    return Decision(Verdict.UNPARSEABLE, raw, None)


def mock_oracle(preference, ambiguity_rate: float, rng: np.random.Generator) -> Decision:
    """Offline stand-in for the model when a cannot-walk preference is active.

    Answers "not send" except with probability ``ambiguity_rate``, which
    models replies to ambiguous preferences that wrongly say "send".
    """
    if not 0.0 <= ambiguity_rate <= 1.0:
        raise ParameterError("ambiguity_rate must be in [0, 1]")
    if not preference:
        raise ParameterError("mock_oracle is only consulted while a preference is active")
    if rng.random() < ambiguity_rate:
        raw = f'send. The preference "{preference}" does not clearly rule out walking.'
        return Decision(Verdict.SEND, raw, raw[len("send. "):])
    raw = f'not send. The user said "{preference}", so they cannot walk today.'
    return Decision(Verdict.NOT_SEND, raw, raw[len("not send. "):])


@dataclass(frozen=True)
class LLMClientConfig:
    """Chat endpoint settings. ``endpoint_url`` is the full completions URL."""

    endpoint_url: str = "http://localhost:8000/v1/chat/completions"
    model_name: str = "llama3-70b-8192"
    api_key_env_var: str = "LLM_API_KEY"
    timeout: float = 30.0
    max_retries: int = 3
    temperature: float = 0.0
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_retries < 0:
            raise ParameterError("max_retries must be >= 0")
        if not self.timeout > 0:
            raise ParameterError("timeout must be > 0")

    def api_key(self):
        key = os.environ.get(self.api_key_env_var)
        if not key:
            raise ConfigurationError(
                f"environment variable {self.api_key_env_var} is not set"
            )
        return key


_RETRYABLE_STATUS = {408, 409, 425, 429}


class ChatClient:
    """Synchronous chat-completion client with exponential backoff.

    ``calls`` counts completed :meth:`complete` invocations, ``attempts``
    counts HTTP requests including retries.
    """

    def __init__(self, config: LLMClientConfig, http_client=None, sleep=time.sleep):
        self.config = config
        self._key = config.api_key()
        self._http = http_client or httpx.Client(timeout=config.timeout)
        self._sleep = sleep
        self.calls = 0
        self.attempts = 0

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, prompt):
        cfg = self.config
        body = {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
        }
        headers = {"Authorization": f"Bearer {self._key}"}
        response = self._http.post(cfg.endpoint_url, json=body, headers=headers, timeout=cfg.timeout)
        if response.status_code >= 400:
            raise TransportError(
                f"HTTP {response.status_code} from {cfg.endpoint_url}: {response.text[:200]}",
                status_code=response.status_code,
            )
        if not response.content:
            raise TransportError("empty response body", status_code=response.status_code)
        try:
            text = response.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc!r}") from exc
        if not text:
            raise TransportError("empty completion text", status_code=response.status_code)
        return text

    def complete(self, prompt: str) -> str:
        last = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff_base * 2 ** (attempt - 1))
            self.attempts += 1
            try:
                text = self._request(prompt)
            except httpx.HTTPError as exc:
                last = TransportError(f"{type(exc).__name__}: {exc}")
            except TransportError as exc:
                last = exc
                status = exc.status_code
                if status is not None and status < 500 and status not in _RETRYABLE_STATUS:
                    break
            else:
                self.calls += 1
                return text
            logger.warning("chat request attempt %d failed: %s", attempt + 1, last)
        last.attempts = self.attempts
        raise last


def query_llm(cfg: LLMClientConfig, prompt: str, http_client=None, sleep=time.sleep) -> str:
    """Single-shot convenience wrapper around :class:`ChatClient`."""
    client = ChatClient(cfg, http_client=http_client, sleep=sleep)
    try:
        return client.complete(prompt)
    finally:
        if http_client is None:
            client.close()


@dataclass
class AuditLog:
    """Append-only JSON-lines log of filter decisions."""

    path: Path
    _fh: object = field(default=None, repr=False)

    def record(self, t, prompt, decision: Decision):
        if self._fh is None:
            Path(self.path).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "a", encoding="utf-8")
        entry = {
            "t": t,
            "prompt_sha256": prompt_hash(prompt),
            "raw": decision.raw,
            "verdict": decision.verdict.value,
        }
        self._fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None
