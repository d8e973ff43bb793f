"""Uniform gateway to text generation and suffix logprob scoring.

Scoring contract: the score of a suffix given a context is the arithmetic
mean of the per-token natural-log probabilities of the suffix tokens only,
obtained from a completions endpoint that echoes prompt token logprobs.
Suffix tokens are isolated by character offset: the first echoed token
starting at len(context) begins the suffix. Backends without logprob echo
can fall back to a judged 0-100 agreement rating converted to a
pseudo-logprob, flagged so downstream consumers can tell the two apart.
"""

from __future__ import annotations

import hashlib
import math
import os
import re
import threading
import time
from dataclasses import dataclass

import httpx


class GatewayError(RuntimeError):
    pass


class TransientBackendError(GatewayError):
    """Timeout or HTTP failure that is worth retrying."""


class EmptyCompletionError(GatewayError):
    pass


class LogprobsUnsupportedError(GatewayError):
    pass


class TokenBoundaryError(GatewayError):
    """The tokenizer split a token across the context/suffix boundary."""

    def __init__(self, context_len: int, offsets: list[int]):
        self.context_len = context_len
        self.offsets = offsets
        super().__init__(
            f"no token boundary at context length {context_len}; "
            f"nearest offsets {_nearest(offsets, context_len)}"
        )


def _nearest(offsets: list[int], target: int) -> list[int]:
    return sorted(offsets, key=lambda o: abs(o - target))[:2]


@dataclass(frozen=True)
class Prompt:
    system: str
    user: str

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.system.encode("utf-8"))
        digest.update(b"\x1f")
        digest.update(self.user.encode("utf-8"))
        return digest.hexdigest()


@dataclass
class GenerationRequest:
    prompt: Prompt
    temperature: float = 0.7
    max_tokens: int = 1024
    sample_count: int = 1
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.sample_count > 1 and self.temperature <= 0:
            raise ValueError("sampling more than one completion requires temperature > 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass
class SuffixScore:
    token_logprobs: list[float]
    mean_logprob: float
    token_count: int
    fallback: bool = False

    @classmethod
    def from_logprobs(cls, logprobs: list[float], fallback: bool = False) -> "SuffixScore":
        if not logprobs:
            raise GatewayError("suffix produced no tokens to score")
        cleaned = []
        for lp in logprobs:
            if lp > 1e-6:
                raise GatewayError(f"log probability above zero: {lp}")
            cleaned.append(min(0.0, float(lp)))
        return cls(
            token_logprobs=cleaned,
            mean_logprob=sum(cleaned) / len(cleaned),
            token_count=len(cleaned),
            fallback=fallback,
        )


@dataclass
class BackendConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "base-model"
    api_key_env: str = "RAGTREE_API_KEY"
    timeout_s: float = 120.0
    max_retries: int = 2
    backoff_s: float = 0.5
    max_in_flight: int = 4

    def __post_init__(self) -> None:
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


@dataclass
class CallRecord:
    """One gateway-level operation, as written into growth traces."""

    kind: str  # "generate" or "score"
    purpose: str
    fingerprint: str
    retries: int
    latency_s: float
    samples: int

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "purpose": self.purpose,
            "fingerprint": self.fingerprint,
            "retries": self.retries,
            "latency_s": self.latency_s,
            "samples": self.samples,
        }


class CallRecorder:
    def __init__(self) -> None:
        self.records: list[CallRecord] = []

    def add(self, record: CallRecord) -> None:
        self.records.append(record)


def suffix_logprobs_from_echo(
    text_offsets: list[int], token_logprobs: list[float | None], context_len: int
) -> list[float]:
    """Isolate the suffix's logprobs from an echoed completions payload.

    `text_offsets[i]` is the character offset where token i starts in the
    full prompt (context + suffix). The suffix begins exactly at
    `context_len`; a tokenizer that merged characters across that boundary
    makes the score undefined, which is fatal.
    """
    start = None
    for i, offset in enumerate(text_offsets):
        if offset == context_len:
            start = i
            break
        if offset > context_len:
            raise TokenBoundaryError(context_len, text_offsets)
    if start is None:
        raise TokenBoundaryError(context_len, text_offsets)
    suffix_lps = token_logprobs[start:]
    if any(lp is None for lp in suffix_lps):
        raise GatewayError("endpoint returned null logprobs for suffix tokens")
    return [float(lp) for lp in suffix_lps]


class HttpBackend:
    """OpenAI-compatible HTTP backend (chat completions + echoed completions).

    vLLM-style servers expose both routes; auth comes from the environment
    variable named in the config.
    """

    deterministic = False
    supports_logprobs = True

    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {}
        api_key = os.environ.get(config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(
            base_url=config.base_url,
            headers=headers,
            timeout=config.timeout_s,
            transport=transport,
        )

    def generate(self, request: GenerationRequest) -> list[str]:
        body = {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.prompt.system},
                {"role": "user", "content": request.prompt.user},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "n": request.sample_count,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        try:
            response = self._client.post("/chat/completions", json=body)
            response.raise_for_status()
        except (httpx.TransportError, httpx.HTTPStatusError) as exc:
            raise TransientBackendError(str(exc)) from exc
        choices = response.json()["choices"]
        return [choice["message"]["content"] or "" for choice in choices]

    def score_suffix(self, context: str, suffix: str) -> list[float]:
        body = {
            "model": self.config.model,
            "prompt": context + suffix,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
            "temperature": 0.0,
        }
        try:
            response = self._client.post("/completions", json=body)
            response.raise_for_status()
        except (httpx.TransportError, httpx.HTTPStatusError) as exc:
            raise TransientBackendError(str(exc)) from exc
        payload = response.json()["choices"][0].get("logprobs")
        if payload is None:
            raise LogprobsUnsupportedError("endpoint did not return logprobs")
        return suffix_logprobs_from_echo(
            payload["text_offset"], payload["token_logprobs"], len(context)
        )


_SCORE_RE = re.compile(r"Score:\s*(-?\d+)")

FALLBACK_RATING_SYSTEM = (
    "You rate how strongly a statement holds for the material above it. "
    "Reply with reasoning if you like, but the final line must be exactly "
    "'Score: <integer 0-100>'."
)


class LLMGateway:
    """Adds retry, empty-completion handling, concurrency limits, and call
    recording on top of a backend.

    Total attempts per operation = 1 + max_retries; only transient backend
    failures are retried. An empty completion is retried once with the same
    request before failing.
    """

    def __init__(
        self,
        backend,
        max_retries: int = 2,
        backoff_s: float = 0.0,
        max_in_flight: int = 4,
        judge_fallback: bool = False,
    ):
        self.backend = backend
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.judge_fallback = judge_fallback
        self._slots = threading.BoundedSemaphore(max_in_flight)

    @classmethod
    def from_config(cls, config: BackendConfig, backend=None, judge_fallback: bool = False):
        return cls(
            backend=backend if backend is not None else HttpBackend(config),
            max_retries=config.max_retries,
            backoff_s=config.backoff_s,
            max_in_flight=config.max_in_flight,
            judge_fallback=judge_fallback,
        )

    def _attempt(self, fn):
        attempts = 1 + self.max_retries
        last_error: Exception | None = None
        for attempt in range(attempts):
            try:
                with self._slots:
                    return fn(), attempt
            except TransientBackendError as exc:
                last_error = exc
                if attempt + 1 < attempts and self.backoff_s:
                    time.sleep(self.backoff_s * (2**attempt))
        raise GatewayError(f"backend failed after {attempts} attempts: {last_error}")

    def _record(self, recorder, kind, purpose, fingerprint, retries, elapsed, samples):
        if recorder is None:
            return
        latency = 0.0 if getattr(self.backend, "deterministic", False) else elapsed
        recorder.add(
            CallRecord(
                kind=kind,
                purpose=purpose,
                fingerprint=fingerprint,
                retries=retries,
                latency_s=latency,
                samples=samples,
            )
        )

    def generate(
        self,
        request: GenerationRequest,
        purpose: str = "generate",
        recorder: CallRecorder | None = None,
    ) -> list[str]:
        """Return exactly `request.sample_count` completions."""
        started = time.monotonic()
        completions, retries = self._attempt(lambda: self.backend.generate(request))
        if any(not c.strip() for c in completions):
            completions, extra = self._attempt(lambda: self.backend.generate(request))
            retries += 1 + extra
            if any(not c.strip() for c in completions):
                self._record(
                    recorder, "generate", purpose, request.prompt.fingerprint(),
                    retries, time.monotonic() - started, len(completions),
                )
                raise EmptyCompletionError(f"backend returned an empty completion for {purpose}")
        if len(completions) != request.sample_count:
            raise GatewayError(
                f"expected {request.sample_count} completions, got {len(completions)}"
            )
        self._record(
            recorder, "generate", purpose, request.prompt.fingerprint(),
            retries, time.monotonic() - started, len(completions),
        )
        return completions

    def score_suffix(
        self,
        context: str,
        suffix: str,
        purpose: str = "score",
        recorder: CallRecorder | None = None,
    ) -> SuffixScore:
        """Mean natural-log probability of the suffix tokens given the context."""
        if not suffix.strip():
            raise ValueError("suffix must be non-empty")
        started = time.monotonic()
        fingerprint = Prompt(system="", user=context + "\x1f" + suffix).fingerprint()
        if not getattr(self.backend, "supports_logprobs", True):
            if not self.judge_fallback:
                raise LogprobsUnsupportedError(
                    "backend has no logprob echo and judge fallback is disabled"
                )
            score = self._fallback_rating(context, suffix)
            result = SuffixScore.from_logprobs(
                [math.log(max(score, 1) / 100.0)], fallback=True
            )
            self._record(
                recorder, "score", purpose + ":fallback", fingerprint,
                0, time.monotonic() - started, 1,
            )
            return result
        logprobs, retries = self._attempt(lambda: self.backend.score_suffix(context, suffix))
        self._record(
            recorder, "score", purpose, fingerprint,
            retries, time.monotonic() - started, len(logprobs),
        )
        return SuffixScore.from_logprobs(logprobs)

    def _fallback_rating(self, context: str, suffix: str) -> int:
        request = GenerationRequest(
            prompt=Prompt(
                system=FALLBACK_RATING_SYSTEM,
                user=f"{context}\n\nStatement: {suffix}",
            ),
            temperature=0.0,
            max_tokens=64,
            sample_count=1,
        )
        text, _ = self._attempt(lambda: self.backend.generate(request))
        matches = _SCORE_RE.findall(text[0])
        if not matches:
            raise GatewayError(f"fallback rating reply had no score line: {text[0]!r}")
        value = int(matches[-1])
        if not 0 <= value <= 100:
            raise GatewayError(f"fallback rating out of range: {value}")
        return value
