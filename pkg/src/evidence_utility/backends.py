"""Model backends: the chat-completions wire client and a synthetic stand-in.

Every backend exposes ``backend_id`` and ``complete(prompt, ...)`` returning a
:class:`BackendResponse`. Backends must accept concurrent calls.
"""
from __future__ import annotations

import logging
import math
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Protocol

import httpx

from .payloads import to_content_part
from .prompts import OPTION_LETTERS, PromptInstance
from .seeding import make_rng, unit_hash

log = logging.getLogger(__name__)

DEFAULT_TOP_LOGPROBS = 20


class BackendError(RuntimeError):
    retryable = False


class BackendTransportError(BackendError):
    """Network failure, timeout or 5xx/429 status; safe to retry."""

    retryable = True


class MalformedResponseError(BackendError):
    pass


@dataclass(frozen=True)
class BackendResponse:
    first_position_logprobs: dict[str, float] = field(default_factory=dict)
    generated_text: str | None = None
    per_token_probs: tuple[float, ...] | None = None
    usage: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for tok, lp in self.first_position_logprobs.items():
            if not lp <= 0.0:
                raise MalformedResponseError(f"log-probability {lp!r} for {tok!r} is positive")
        if self.per_token_probs is not None:
            object.__setattr__(self, "per_token_probs", tuple(self.per_token_probs))
            for p in self.per_token_probs:
                if not 0.0 <= p <= 1.0:
                    raise MalformedResponseError(f"token probability {p!r} outside [0, 1]")


class Backend(Protocol):
    backend_id: str

    def complete(
        self,
        prompt: PromptInstance,
        *,
        temperature: float = 0.0,
        max_tokens: int = 1,
        logprobs: bool = False,
        top_logprobs: int | None = None,
        seed: int | None = None,
    ) -> BackendResponse: ...


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


class SyntheticBackend:
    """Deterministic backend for tests and offline runs.

    A probe's latent helpfulness logit is a standard normal draw keyed by
    ``(seed, query_id, candidate_id)`` plus ``bias[candidate_id]``. Answers are
    correct (per ``answers``) with probability equal to the mean helpfulness
    of the attached evidence, decided by a hash of the request so repeated
    calls agree.
    """

    def __init__(
        self,
        seed: int = 0,
        backend_id: str = "synthetic",
        bias: Mapping[str, float] | None = None,
        answers: Mapping[str, str] | None = None,
        drop_labels: frozenset[str] = frozenset(),
    ):
        self.seed = seed
        self.backend_id = backend_id
        self.bias = dict(bias or {})
        self.answers = dict(answers or {})
        self.drop_labels = frozenset(drop_labels)

    def latent(self, query_id: str, candidate_id: str) -> float:
        z = float(make_rng(self.seed, "latent", query_id, candidate_id).standard_normal())
        return z + self.bias.get(candidate_id, 0.0)

    def helpfulness(self, query_id: str, candidate_id: str) -> float:
        return _sigmoid(self.latent(query_id, candidate_id))

    def complete(
        self,
        prompt: PromptInstance,
        *,
        temperature: float = 0.0,
        max_tokens: int = 1,
        logprobs: bool = False,
        top_logprobs: int | None = None,
        seed: int | None = None,
    ) -> BackendResponse:
        usage = {
            "prompt_tokens": len(prompt.text.split()) + 256 * len(prompt.evidence_refs),
        }
        if prompt.kind == "probe":
            return self._probe(prompt, usage)
        return self._answer(prompt, usage, temperature, max_tokens, seed)

    def _probe(self, prompt: PromptInstance, usage: dict) -> BackendResponse:
        (cid,) = prompt.candidate_ids
        p = self.helpfulness(prompt.query_id, cid)
        pos, neg = prompt.label_space
        # Multi-word labels surface as their first word at the first position.
        lps = {
            pos.split()[0]: math.log(max(p, 1e-300)) - 1e-3,
            neg.split()[0]: math.log(max(1.0 - p, 1e-300)) - 1e-3,
            "The": -9.0,
            "I": -11.0,
        }
        for label in self.drop_labels:
            lps.pop(label.split()[0], None)
        text = pos if p >= 0.5 else neg
        return BackendResponse(lps, text, (max(p, 1.0 - p),), {**usage, "completion_tokens": 1})

    def _answer(self, prompt, usage, temperature, max_tokens, seed) -> BackendResponse:
        qid = prompt.query_id
        cids = prompt.candidate_ids
        if cids:
            quality = sum(self.helpfulness(qid, c) for c in cids) / len(cids)
        else:
            quality = 0.35
        key = (qid, ",".join(cids), "greedy" if temperature == 0 else f"t{temperature}:{seed}")
        u = unit_hash(self.seed, "answer", *key)
        gold = self.answers.get(qid)
        n_choices = len(prompt.choices or ())
        if n_choices:
            letters = OPTION_LETTERS[:n_choices]
            if gold in letters and u < quality:
                answer = gold
            else:
                answer = letters[int(unit_hash(self.seed, "wrong", *key) * n_choices)]
            # Choice logits peak on the produced letter with a margin that grows with quality.
            first = {
                L: (0.0 if L == answer else -(0.5 + 4.0 * quality) - 0.1 * i)
                for i, L in enumerate(letters)
            }
            norm = math.log(sum(math.exp(v) for v in first.values()))
            first = {L: v - norm for L, v in first.items()}
            tokens = [answer]
        else:
            if gold and u < quality:
                answer = gold
            else:
                answer = f"unsure-{int(u * 1000):03d}"
            first = {}
            tokens = answer.split()
        tokens = tokens[: max(max_tokens, 1)]
        rng = make_rng(self.seed, "token_probs", *key)
        probs = tuple(
            float(min(1.0, quality + (1.0 - quality) * rng.uniform(0.0, 1.0))) for _ in tokens
        )
        text = answer if n_choices else f"Answer: {answer}"
        return BackendResponse(first, text, probs, {**usage, "completion_tokens": len(tokens)})


class CountingBackend:
    """Wraps a backend, counting calls per prompt kind and peak concurrency.

    ``fail_candidates`` makes probes for those candidate ids raise a
    transport error; ``fail_generation`` does the same for answer calls.
    """

    def __init__(self, inner, fail_candidates=(), fail_generation: bool = False, delay: float = 0.0):
        self.inner = inner
        self.backend_id = getattr(inner, "backend_id", "wrapped")
        self.fail_candidates = set(fail_candidates)
        self.fail_generation = fail_generation
        self.delay = delay
        self.calls: Counter = Counter()
        self.max_in_flight = 0
        self._in_flight = 0
        self._lock = threading.Lock()

    def complete(self, prompt: PromptInstance, **kwargs) -> BackendResponse:
        with self._lock:
            self.calls[prompt.kind] += 1
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            if prompt.kind == "probe" and set(prompt.candidate_ids) & self.fail_candidates:
                raise BackendTransportError(f"injected failure for {prompt.candidate_ids}")
            if prompt.kind == "answer" and self.fail_generation:
                raise BackendTransportError("injected generation failure")
            return self.inner.complete(prompt, **kwargs)
        finally:
            with self._lock:
                self._in_flight -= 1


class OpenAICompatibleBackend:
    """Client for an OpenAI-compatible ``/chat/completions`` endpoint.

    The API key is read from the environment variable named by
    ``api_key_env``; it is never passed directly.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str | None = "OPENAI_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 2,
        backoff: float = 0.5,
        client: httpx.Client | None = None,
        backend_id: str | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.backend_id = backend_id or model
        self.max_retries = max_retries
        self.backoff = backoff
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(api_key_env) if api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = headers

    def close(self) -> None:
        self._client.close()

    @staticmethod
    def messages_for(prompt: PromptInstance) -> list[dict]:
        parts = [to_content_part(ref) for ref in prompt.evidence_refs]
        parts.append({"type": "text", "text": prompt.text})
        return [{"role": "user", "content": parts}]

    def request_payload(
        self,
        prompt: PromptInstance,
        *,
        temperature: float = 0.0,
        max_tokens: int = 1,
        logprobs: bool = False,
        top_logprobs: int | None = None,
        seed: int | None = None,
    ) -> dict:
        payload = {
            "model": self.model,
            "messages": self.messages_for(prompt),
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        if logprobs or top_logprobs:
            payload["logprobs"] = True
            if top_logprobs:
                payload["top_logprobs"] = top_logprobs
        if seed is not None:
            payload["seed"] = seed
        return payload

    def complete(self, prompt: PromptInstance, **kwargs) -> BackendResponse:
        payload = self.request_payload(prompt, **kwargs)
        data = self._post(payload)
        return parse_chat_response(data, want_logprobs=bool(payload.get("logprobs")))

    def _post(self, payload: dict) -> dict:
        url = f"{self.base_url}/chat/completions"
        attempt = 0
        while True:
            try:
                resp = self._client.post(url, json=payload, headers=self._headers)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise BackendTransportError(f"HTTP {resp.status_code} from {url}")
                if resp.status_code >= 400:
                    raise BackendError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
                try:
                    return resp.json()
                except ValueError:
                    raise MalformedResponseError("response body is not JSON") from None
            except httpx.TransportError as exc:
                err = BackendTransportError(f"{type(exc).__name__}: {exc}")
            except BackendTransportError as exc:
                err = exc
            attempt += 1
            if attempt > self.max_retries:
                raise err
            log.warning("retrying %s after %s (attempt %d)", url, err, attempt)
            time.sleep(self.backoff * 2 ** (attempt - 1))


def _top_entries(entry) -> dict[str, float]:
    top = entry.get("top_logprobs") or []
    if isinstance(top, dict):
        return {str(k): float(v) for k, v in top.items()}
    return {str(t["token"]): float(t["logprob"]) for t in top}


def parse_chat_response(data: dict, want_logprobs: bool = True) -> BackendResponse:
    """Normalize a chat-completions JSON body into a :class:`BackendResponse`."""
    try:
        choice = data["choices"][0]
        text = choice["message"].get("content")
        usage_raw = data.get("usage") or {}
        usage = {
            "prompt_tokens": int(usage_raw.get("prompt_tokens", 0)),
            "completion_tokens": int(usage_raw.get("completion_tokens", 0)),
        }
        first: dict[str, float] = {}
        probs = None
        lp_block = choice.get("logprobs")
        if lp_block:
            content = lp_block.get("content") or []
            if content:
                first = _top_entries(content[0])
                tok0 = str(content[0]["token"])
                first.setdefault(tok0, float(content[0]["logprob"]))
                # Servers can report log-probabilities like 1e-7 through rounding.
                first = {k: min(v, 0.0) for k, v in first.items()}
                probs = tuple(min(1.0, math.exp(float(e["logprob"]))) for e in content)
        elif want_logprobs:
            raise MalformedResponseError("logprobs requested but absent from response")
    except (KeyError, IndexError, TypeError, AttributeError, ValueError) as exc:
        raise MalformedResponseError(f"unexpected response shape: {exc!r}") from None
    return BackendResponse(first, text, probs, usage)


def backend_from_config(spec: Mapping) -> Backend:
    """Instantiate a backend from a config mapping with a ``type`` key."""
    kind = spec.get("type", "synthetic")
    if kind == "synthetic":
        return SyntheticBackend(
            seed=int(spec.get("seed", 0)),
            backend_id=spec.get("id", "synthetic"),
            bias=spec.get("bias"),
            answers=spec.get("answers"),
        )
    if kind == "openai":
        return OpenAICompatibleBackend(
            base_url=spec["base_url"],
            model=spec["model"],
            api_key_env=spec.get("api_key_env", "OPENAI_API_KEY"),
            timeout=float(spec.get("timeout", 60.0)),
            max_retries=int(spec.get("max_retries", 2)),
            backend_id=spec.get("id"),
        )
    raise ValueError(f"unknown backend type {kind!r}")
