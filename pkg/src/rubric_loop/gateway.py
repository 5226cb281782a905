"""Pluggable completion backend (live HTTP or deterministic mock) and the
strict parser that turns raw generations into score vectors.

The score grammar (see FORMAT.md) is a bit-exact contract shared with the
prompt renderer: ``SUBSCORE <name>: <0|1>`` lines, each optionally followed by
``REASONING: <text until the next keyword line>``, terminated by
``TOTAL: <int>``. Prose before or between score lines is tolerated and
captured as reasoning for the nearest following subscore; an absent REASONING
is recorded as empty, never fabricated.
"""

from __future__ import annotations

import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Protocol, Sequence

from .errors import (
    AuthFailureError,
    BackendRefusalError,
    BudgetExceededError,
    GatewayError,
    ParseError,
    TransientExhaustedError,
    ValidationError,
)
from .hashing import digest_of, digest_of_text
from .model import Generation, Rubric, ScoreVector, StudentResponse, fold_name
from .prompting import PromptSpec, PromptText, estimate_tokens, implementation_label, render_prompt

API_KEY_ENV = "RUBRIC_LOOP_API_KEY"


@dataclass(frozen=True)
class GatewayConfig:
    backend: str = "mock"  # "mock" | "live"
    model_id: str = "gpt-4"
    temperature: float = 0.0
    max_retries: int = 3
    backoff_base_ms: int = 250
    max_inflight: int = 4
    token_budget: int = 100_000
    base_url: str = "https://api.openai.com/v1"
    timeout_s: float = 60.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_inflight < 1:
            raise ValidationError("max_inflight must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "backend": self.backend,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "max_retries": self.max_retries,
            "backoff_base_ms": self.backoff_base_ms,
            "max_inflight": self.max_inflight,
            "token_budget": self.token_budget,
            "base_url": self.base_url,
            "timeout_s": self.timeout_s,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GatewayConfig":
        return cls(**d)


class TransientBackendError(GatewayError):
    """Retryable failure: timeout, throttling, or server error."""


@dataclass(frozen=True)
class BackendReply:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    latency_ms: int = 0


class CompletionBackend(Protocol):
    def send(self, prompt: str, cfg: GatewayConfig) -> BackendReply: ...


class MockBackend:
    """Deterministic test backend.

    Replies are looked up by prompt digest first; unmatched prompts fall back
    to the ``script`` callable. ``fail_transient`` injects that many retryable
    failures before the first success, for retry-path tests.
    """

    def __init__(
        self,
        table: Mapping[str, str] | None = None,
        script: Callable[[str], str] | None = None,
        fail_transient: int = 0,
    ):
        self.table = dict(table or {})
        self.script = script
        self._fail_remaining = fail_transient
        self._lock = threading.Lock()
        self.calls: list[str] = []

    @property
    def n_calls(self) -> int:
        return len(self.calls)

    def send(self, prompt: str, cfg: GatewayConfig) -> BackendReply:
        with self._lock:
            self.calls.append(prompt)
            if self._fail_remaining > 0:
                self._fail_remaining -= 1
                raise TransientBackendError("scripted transient failure")
        reply = self.table.get(digest_of_text(prompt))
        if reply is None and self.script is not None:
            reply = self.script(prompt)
        if reply is None:
            raise BackendRefusalError("mock backend has no reply for this prompt")
        return BackendReply(
            text=reply,
            prompt_tokens=estimate_tokens(prompt),
            completion_tokens=estimate_tokens(reply),
            latency_ms=0,
        )


class LiveBackend:
    """Chat-completion HTTP backend. Credentials come from the environment."""

    def __init__(self, api_key: str | None = None):
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)

    def send(self, prompt: str, cfg: GatewayConfig) -> BackendReply:
        import httpx

        if not self.api_key:
            raise AuthFailureError(f"no API key: set {API_KEY_ENV}")
        payload = {
            "model": cfg.model_id,
            "temperature": cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        started = time.perf_counter()
        try:
            response = httpx.post(
                f"{cfg.base_url.rstrip('/')}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=cfg.timeout_s,
            )
        except httpx.TimeoutException as exc:
            raise TransientBackendError(f"timeout: {exc}") from exc
        except httpx.HTTPError as exc:
            raise TransientBackendError(f"transport error: {exc}") from exc
        latency_ms = int((time.perf_counter() - started) * 1000)

        if response.status_code in (401, 403):
            raise AuthFailureError(f"auth failure: HTTP {response.status_code}")
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientBackendError(f"HTTP {response.status_code}")
        if response.status_code >= 400:
            raise BackendRefusalError(f"HTTP {response.status_code}: {response.text[:200]}")

        body = response.json()
        try:
            text = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendRefusalError(f"malformed completion body: {exc}") from exc
        usage = body.get("usage", {})
        return BackendReply(
            text=text,
            prompt_tokens=usage.get("prompt_tokens", 0),
            completion_tokens=usage.get("completion_tokens", 0),
            latency_ms=latency_ms,
        )


def _jitter_factor(attempt: int, seed_text: str) -> float:
    # Deterministic +/-20% jitter derived from the prompt so retries replay.
    bucket = int(digest_of_text(f"{seed_text}|{attempt}")[:8], 16) % 1000
    return 0.8 + 0.4 * bucket / 999.0


def complete(
    prompt: PromptText | str,
    cfg: GatewayConfig,
    backend: CompletionBackend,
    *,
    sleep: Callable[[float], None] = time.sleep,
) -> Generation:
    """Send one prompt and return the verbatim generation.

    Transient failures are retried up to ``cfg.max_retries`` times with
    exponential backoff; budget and auth errors are never retried. The prompt
    is rejected before any network call if its token estimate exceeds the
    configured budget.
    """
    text = prompt.text if isinstance(prompt, PromptText) else prompt
    estimate = estimate_tokens(text)
    if estimate > cfg.token_budget:
        raise BudgetExceededError(
            f"prompt estimate {estimate} tokens exceeds budget {cfg.token_budget}"
        )

    attempts = 0
    while True:
        attempts += 1
        try:
            reply = backend.send(text, cfg)
        except TransientBackendError as exc:
            if attempts > cfg.max_retries:
                raise TransientExhaustedError(
                    f"gave up after {attempts} attempts: {exc}", attempts=attempts
                ) from exc
            delay_ms = cfg.backoff_base_ms * (2 ** (attempts - 1)) * _jitter_factor(attempts, text)
            sleep(delay_ms / 1000.0)
            continue
        return Generation(
            prompt_hash=digest_of_text(text),
            raw_text=reply.text,
            model_id=cfg.model_id,
            latency_ms=reply.latency_ms,
            prompt_tokens=reply.prompt_tokens,
            completion_tokens=reply.completion_tokens,
            attempts=attempts,
        )


@dataclass(frozen=True)
class ParsedScore:
    """A generation reduced to a validated score vector plus reasoning text."""

    scores: ScoreVector
    reasoning: dict[str, str]
    raw: Generation | None = None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {
            "scores": self.scores.to_dict(),
            "reasoning": dict(self.reasoning),
            "raw": self.raw.to_dict() if self.raw else None,
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ParsedScore":
        return cls(
            scores=ScoreVector.from_dict(d["scores"]),
            reasoning=dict(d["reasoning"]),
            raw=Generation.from_dict(d["raw"]) if d.get("raw") else None,
            flags=tuple(d.get("flags", ())),
        )


_SUBSCORE_RE = re.compile(r"^\s*SUBSCORE\s+(?P<name>.+?)\s*:\s*(?P<value>.+?)\s*$")
_REASONING_RE = re.compile(r"^\s*REASONING\s*:\s*(?P<text>.*)$")
_TOTAL_RE = re.compile(r"^\s*TOTAL\s*:\s*(?P<value>.+?)\s*$")


def parse_generation(
    raw: str,
    rubric: Rubric,
    *,
    response_id: str = "",
    generation: Generation | None = None,
) -> ParsedScore:
    """Parse the score grammar out of a raw generation.

    A declared TOTAL that disagrees with the subscore sum is recoverable: the
    total is recomputed and the result flagged ``total_mismatch``. Missing,
    duplicated, non-binary, or unknown subscore lines raise ``ParseError``.
    """
    if not raw.strip():
        raise ParseError("empty_generation", "generation is empty")

    rubric_names = {fold_name(n): n for n in rubric.subscore_names}
    values: dict[str, int] = {}
    preface: dict[str, list[str]] = {}
    explicit: dict[str, list[str]] = {}
    pending: list[str] = []
    current: str | None = None
    in_reasoning = False
    declared_total: int | None = None
    flags: list[str] = []

    for line in raw.splitlines():
        m = _SUBSCORE_RE.match(line)
        if m:
            name = fold_name(m.group("name"))
            if name not in rubric_names:
                raise ParseError("unknown_subscore", f"unknown subscore {m.group('name')!r}")
            if name in values:
                raise ParseError("duplicate_subscore", f"duplicate subscore {name!r}")
            try:
                value = int(m.group("value"))
            except ValueError:
                raise ParseError(
                    "non_binary_value", f"subscore {name!r} has value {m.group('value')!r}"
                ) from None
            if value not in (0, 1):
                raise ParseError("non_binary_value", f"subscore {name!r} has value {value}")
            values[name] = value
            preface[name] = [l.strip() for l in pending if l.strip()]
            explicit[name] = []
            pending = []
            current = name
            in_reasoning = False
            continue
        m = _TOTAL_RE.match(line)
        if m:
            try:
                declared_total = int(m.group("value"))
            except ValueError:
                flags.append("total_unparseable")
            break
        m = _REASONING_RE.match(line)
        if m:
            if current is None:
                pending.append(m.group("text"))
            else:
                explicit[current].append(m.group("text"))
                in_reasoning = True
            continue
        if in_reasoning and current is not None:
            explicit[current].append(line)
        else:
            pending.append(line)

    missing = [orig for folded, orig in rubric_names.items() if folded not in values]
    if missing:
        raise ParseError("missing_subscore", f"missing subscore lines for {missing}")

    actual_total = sum(values.values())
    if declared_total is None:
        if "total_unparseable" not in flags:
            flags.append("total_missing")
    elif declared_total != actual_total:
        flags.append(f"total_mismatch:declared={declared_total},sum={actual_total}")

    reasoning = {
        name: "\n".join(s for s in (*preface[name], *(l.strip() for l in explicit[name])) if s)
        for name in values
    }
    vector = ScoreVector(response_id=response_id, by_subscore=values, total=actual_total)
    return ParsedScore(scores=vector, reasoning=reasoning, raw=generation, flags=tuple(flags))


@dataclass(frozen=True)
class ScoreFailure:
    response_id: str
    kind: str  # "parse" | "gateway"
    code: str
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "response_id": self.response_id,
            "kind": self.kind,
            "code": self.code,
            "message": self.message,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScoreFailure":
        return cls(**d)


@dataclass(frozen=True)
class ScoringRun:
    """Batch scoring outcome: one parsed score or one failure per response."""

    spec_digest: str
    implementation: str
    model_id: str
    results: dict[str, ParsedScore]
    failures: dict[str, ScoreFailure] = field(default_factory=dict)

    def __post_init__(self):
        doubled = set(self.results) & set(self.failures)
        if doubled:
            raise ValidationError(f"responses both scored and failed: {sorted(doubled)}")

    def digest(self) -> str:
        return digest_of(self.to_dict())

    def to_dict(self) -> dict[str, Any]:
        return {
            "spec_digest": self.spec_digest,
            "implementation": self.implementation,
            "model_id": self.model_id,
            "results": {rid: self.results[rid].to_dict() for rid in sorted(self.results)},
            "failures": {rid: self.failures[rid].to_dict() for rid in sorted(self.failures)},
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ScoringRun":
        return cls(
            spec_digest=d["spec_digest"],
            implementation=d["implementation"],
            model_id=d["model_id"],
            results={k: ParsedScore.from_dict(v) for k, v in d["results"].items()},
            failures={k: ScoreFailure.from_dict(v) for k, v in d.get("failures", {}).items()},
        )


def score_batch(
    responses: Sequence[StudentResponse],
    spec: PromptSpec,
    cfg: GatewayConfig,
    backend: CompletionBackend,
    *,
    prior: ScoringRun | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> ScoringRun:
    """Score every response against the spec's rendered prompt.

    Failures are isolated per response except auth failures, which abort the
    whole batch. Responses already present in ``prior`` are carried over
    without new completions, making reruns resumable.
    """
    if not responses:
        raise ValidationError("score_batch requires at least one response")
    for r in responses:
        if r.question_id != spec.rubric.question_id:
            raise ValidationError(
                f"response {r.id!r} is for question {r.question_id!r}, "
                f"not {spec.rubric.question_id!r}"
            )
    ids = [r.id for r in responses]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate response ids in batch")

    # Balance was enforced when the spec was built; rendering here must not
    # re-litigate it.
    rendered = render_prompt(spec, allow_unbalanced=True)
    results: dict[str, ParsedScore] = {}
    failures: dict[str, ScoreFailure] = {}
    if prior is not None:
        results.update(prior.results)

    todo = [r for r in responses if r.id not in results]

    def score_one(response: StudentResponse) -> ParsedScore:
        generation = complete(rendered.fill(response.text), cfg, backend, sleep=sleep)
        return parse_generation(
            generation.raw_text, spec.rubric, response_id=response.id, generation=generation
        )

    with ThreadPoolExecutor(max_workers=cfg.max_inflight) as pool:
        futures = {pool.submit(score_one, r): r for r in todo}
        try:
            for future in as_completed(futures):
                response = futures[future]
                try:
                    results[response.id] = future.result()
                except ParseError as exc:
                    failures[response.id] = ScoreFailure(
                        response.id, kind="parse", code=exc.code, message=str(exc)
                    )
                except AuthFailureError:
                    raise
                except GatewayError as exc:
                    failures[response.id] = ScoreFailure(
                        response.id, kind="gateway", code=type(exc).__name__, message=str(exc)
                    )
        except AuthFailureError:
            for f in futures:
                f.cancel()
            raise

    return ScoringRun(
        spec_digest=spec.digest(),
        implementation=implementation_label(spec),
        model_id=cfg.model_id,
        results=results,
        failures=failures,
    )


def make_backend(cfg: GatewayConfig, **mock_kwargs) -> CompletionBackend:
    if cfg.backend == "mock":
        return MockBackend(**mock_kwargs)
    if cfg.backend == "live":
        return LiveBackend()
    raise ValidationError(f"unknown backend {cfg.backend!r}")
