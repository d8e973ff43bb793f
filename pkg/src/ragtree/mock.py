"""Deterministic scripted backends for offline runs and tests.

A mock script is a JSON file of rules matched against requests. Unmatched
requests fall through to pure functions of the request content and the
script seed, so any run against a fixed script is exactly reproducible.

Script layout (all keys optional):

    {
      "seed": 0,
      "embedding_dim": 16,
      "logprob_range": [-3.0, -0.1],
      "supports_logprobs": true,
      "embeddings": {"exact text": [1.0, 0.0, ...]},
      "generate": [
        {"contains": "marker", "completions": ["S0", "S1"],
         "fail_times": 0, "empty_times": 0}
      ],
      "score": [
        {"context_contains": "marker", "suffix_contains": "reliable",
         "token_logprobs": [-0.5, -1.5], "fail_times": 0}
      ]
    }

Generate rules match when every given condition holds; completions are keyed
by sample index (modulo the list), or by call order when "sequence" is true
(the last completion then repeats). `fail_times` makes the first N matching
calls raise a transient error; `empty_times` makes them return empty text.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gateway import GenerationRequest, TransientBackendError


def _digest_floats(key: str, count: int, low: float, high: float) -> list[float]:
    """`count` floats in [low, high), a pure function of `key`."""
    values = []
    block = 0
    while len(values) < count:
        digest = hashlib.sha256(f"{key}|{block}".encode("utf-8")).digest()
        for i in range(0, len(digest) - 7, 8):
            unit = int.from_bytes(digest[i : i + 8], "big") / 2**64
            values.append(low + unit * (high - low))
            if len(values) == count:
                break
        block += 1
    return values


@dataclass
class GenerateRule:
    contains: str | None = None
    fingerprint: str | None = None
    completions: list[str] = field(default_factory=list)
    fail_times: int = 0
    empty_times: int = 0
    sequence: bool = False  # advance through completions per call, not per sample
    _fails_used: int = 0
    _empties_used: int = 0
    _calls: int = 0

    def matches(self, request: GenerationRequest) -> bool:
        text = request.prompt.system + "\n" + request.prompt.user
        if self.contains is not None and self.contains not in text:
            return False
        if self.fingerprint is not None and self.fingerprint != request.prompt.fingerprint():
            return False
        return True


@dataclass
class ScoreRule:
    context_contains: str | None = None
    suffix_contains: str | None = None
    token_logprobs: list[float] = field(default_factory=list)
    fail_times: int = 0
    _fails_used: int = 0

    def matches(self, context: str, suffix: str) -> bool:
        if self.context_contains is not None and self.context_contains not in context:
            return False
        if self.suffix_contains is not None and self.suffix_contains not in suffix:
            return False
        return True


@dataclass
class MockScript:
    seed: int = 0
    embedding_dim: int = 16
    logprob_range: tuple[float, float] = (-3.0, -0.1)
    supports_logprobs: bool = True
    embeddings: dict[str, list[float]] = field(default_factory=dict)
    generate_rules: list[GenerateRule] = field(default_factory=list)
    score_rules: list[ScoreRule] = field(default_factory=list)

    @classmethod
    def from_dict(cls, data: dict) -> "MockScript":
        return cls(
            seed=data.get("seed", 0),
            embedding_dim=data.get("embedding_dim", 16),
            logprob_range=tuple(data.get("logprob_range", (-3.0, -0.1))),
            supports_logprobs=data.get("supports_logprobs", True),
            embeddings=data.get("embeddings", {}),
            generate_rules=[
                GenerateRule(
                    contains=rule.get("contains"),
                    fingerprint=rule.get("fingerprint"),
                    completions=rule.get("completions", []),
                    fail_times=rule.get("fail_times", 0),
                    empty_times=rule.get("empty_times", 0),
                    sequence=rule.get("sequence", False),
                )
                for rule in data.get("generate", [])
            ],
            score_rules=[
                ScoreRule(
                    context_contains=rule.get("context_contains"),
                    suffix_contains=rule.get("suffix_contains"),
                    token_logprobs=rule.get("token_logprobs", []),
                    fail_times=rule.get("fail_times", 0),
                )
                for rule in data.get("score", [])
            ],
        )

    @classmethod
    def load(cls, path: str | Path) -> "MockScript":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class MockLLMBackend:
    """Backend whose outputs are scripted or derived from request hashes.

    Default generation: sample i of a request is "mock:<fp8>:<i>" where fp8
    is the prompt fingerprint prefix. Default scoring: one logprob per
    whitespace token of the suffix, drawn deterministically from
    hash(seed, context, suffix) within `logprob_range`. Counters and rule
    state are lock-protected, so concurrent gateway use is safe.
    """

    deterministic = True

    def __init__(self, script: MockScript | None = None):
        self.script = script or MockScript()
        self.supports_logprobs = self.script.supports_logprobs
        self.generate_calls = 0
        self.score_calls = 0
        self._lock = threading.Lock()

    def generate(self, request: GenerationRequest) -> list[str]:
        with self._lock:
            self.generate_calls += 1
            rule = next(
                (r for r in self.script.generate_rules if r.matches(request)), None
            )
            if rule is not None:
                if rule._fails_used < rule.fail_times:
                    rule._fails_used += 1
                    raise TransientBackendError("scripted transient failure")
                if rule._empties_used < rule.empty_times:
                    rule._empties_used += 1
                    return [""] * request.sample_count
                if rule.completions:
                    if rule.sequence:
                        idx = min(rule._calls, len(rule.completions) - 1)
                        rule._calls += 1
                        return [rule.completions[idx]] * request.sample_count
                    return [
                        rule.completions[i % len(rule.completions)]
                        for i in range(request.sample_count)
                    ]
            fp8 = request.prompt.fingerprint()[:8]
            return [f"mock:{fp8}:{i}" for i in range(request.sample_count)]

    def score_suffix(self, context: str, suffix: str) -> list[float]:
        with self._lock:
            self.score_calls += 1
            rule = next(
                (r for r in self.script.score_rules if r.matches(context, suffix)), None
            )
            if rule is not None:
                if rule._fails_used < rule.fail_times:
                    rule._fails_used += 1
                    raise TransientBackendError("scripted transient failure")
                if rule.token_logprobs:
                    return list(rule.token_logprobs)
            count = max(1, len(suffix.split()))
            low, high = self.script.logprob_range
            return _digest_floats(f"score|{self.script.seed}|{context}|{suffix}", count, low, high)


class MockEmbedder:
    """Embeds text as a unit vector derived from hash(seed, text).

    Exact vectors can be scripted per text via the script's `embeddings` map.
    """

    def __init__(self, script: MockScript | None = None):
        self.script = script or MockScript()
        self.model_name = f"mock-embed-{self.script.embedding_dim}d"
        self.request_count = 0
        self._lock = threading.Lock()

    def embed_texts(self, texts: list[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        with self._lock:
            self.request_count += 1
        vectors = []
        for text in texts:
            scripted = self.script.embeddings.get(text)
            if scripted is not None:
                vectors.append(np.asarray(scripted, dtype=np.float64))
                continue
            raw = _digest_floats(
                f"embed|{self.script.seed}|{text}", self.script.embedding_dim, -1.0, 1.0
            )
            vec = np.asarray(raw, dtype=np.float64)
            vectors.append(vec / np.linalg.norm(vec))
        return vectors
