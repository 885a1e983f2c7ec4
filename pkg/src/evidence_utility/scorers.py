"""Helpfulness probing and answer-level uncertainty baselines."""
from __future__ import annotations

import math
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from .backends import DEFAULT_TOP_LOGPROBS, Backend, BackendError
from .payloads import PayloadError
from .pools import CandidatePool, Query
from .prompts import OPTION_LETTERS, PromptInstance, TemplateError, build_aux_prompt, build_answer_prompt

METHODS = ("choice_entropy", "avg_token_prob", "mc_consistency")
MC_SAMPLES = 5
MC_TEMPERATURE = 1.0


class ScoringError(RuntimeError):
    pass


class BatchScoringError(ScoringError):
    def __init__(self, errors: Mapping[str, str]):
        super().__init__(f"all {len(errors)} candidates failed to score")
        self.errors = dict(errors)


class JudgeError(ScoringError):
    pass


def logistic(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@dataclass(frozen=True)
class HelpfulnessScore:
    """Probe outcome for one candidate.

    ``raw_logit`` is the first-position log-probability of the positive label;
    ``p_c`` is the two-way softmax over the positive and negative labels.
    ``approximate`` marks scores where a label was missing from the returned
    top log-probabilities and a floor value stood in for it.
    """

    candidate_id: str
    raw_logit: float
    p_c: float
    backend_id: str
    neg_logprob: float | None = None
    approximate: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p_c <= 1.0:
            raise ValueError(f"p_c={self.p_c!r} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "raw_logit": self.raw_logit,
            "p_c": self.p_c,
            "backend_id": self.backend_id,
            "neg_logprob": self.neg_logprob,
            "approximate": self.approximate,
        }


@dataclass(frozen=True)
class UncertaintyScore:
    candidate_id: str
    method: str
    value: float
    higher_is_certain: bool

    @property
    def certainty(self) -> float:
        """Value oriented so that larger always means more certain."""
        return self.value if self.higher_is_certain else -self.value


@dataclass
class PoolScores:
    """Per-candidate scores (sorted by candidate id) and per-candidate failures."""

    scores: list = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)


def _norm_token(tok: str) -> str:
    # Byte-level BPE and sentencepiece word-boundary markers.
    return tok.replace("Ġ", " ").replace("▁", " ").strip().casefold()


def resolve_label(logprobs: Mapping[str, float], label: str) -> float | None:
    """Log-probability of ``label`` at the first position, or None if absent.

    A returned token matches when its normalized form is a non-empty prefix of
    the normalized label; the longest match wins, then the higher logprob.
    """
    target = label.strip().casefold()
    best: tuple[int, float] | None = None
    for tok, lp in logprobs.items():
        norm = _norm_token(tok)
        if norm and target.startswith(norm):
            cand = (len(norm), lp)
            if best is None or cand > best:
                best = cand
    return None if best is None else best[1]


def score_helpfulness(backend: Backend, prompt: PromptInstance) -> HelpfulnessScore:
    resp = backend.complete(
        prompt, temperature=0.0, max_tokens=1, logprobs=True, top_logprobs=DEFAULT_TOP_LOGPROBS
    )
    lps = resp.first_position_logprobs
    if not lps:
        raise BackendError("backend returned no first-position log-probabilities")
    pos_label, neg_label = prompt.label_space
    pos = resolve_label(lps, pos_label)
    neg = resolve_label(lps, neg_label)
    approximate = pos is None or neg is None
    floor = min(lps.values()) - 1.0
    pos = floor if pos is None else pos
    neg = floor if neg is None else neg
    (cid,) = prompt.candidate_ids or ("",)
    return HelpfulnessScore(cid, pos, logistic(pos - neg), backend.backend_id, neg, approximate)


def _run_bounded(fn, items: Sequence, limit: int) -> list:
    """Apply ``fn`` to items with at most ``limit`` calls in flight.

    Returns ``(item, result, error_message)`` triples in input order.
    """
    if limit < 1:
        raise ValueError("concurrency_limit must be >= 1")

    def safe(item):
        try:
            return item, fn(item), None
        except (BackendError, PayloadError, TemplateError, ScoringError) as exc:
            return item, None, f"{type(exc).__name__}: {exc}"

    if not items:
        return []
    with ThreadPoolExecutor(max_workers=min(limit, len(items))) as pool:
        return list(pool.map(safe, items))


def score_pool(
    backend: Backend,
    query: Query,
    pool: CandidatePool,
    template_id: str,
    concurrency_limit: int = 4,
) -> PoolScores:
    """Probe every candidate; failures are collected, not raised.

    Raises :class:`BatchScoringError` only when every candidate fails.
    """

    def one(candidate):
        return score_helpfulness(backend, build_aux_prompt(query, candidate, template_id))

    out = PoolScores()
    for cand, score, err in _run_bounded(one, list(pool.candidates), concurrency_limit):
        if err is None:
            out.scores.append(score)
        else:
            out.errors[cand.id] = err
    out.scores.sort(key=lambda s: s.candidate_id)
    if pool.candidates and not out.scores:
        raise BatchScoringError(out.errors)
    return out


def choice_softmax_entropy(choice_logits: Sequence[float], candidate_id: str = "") -> UncertaintyScore:
    """Entropy (nats) of the softmax over option logits; larger = less certain."""
    if len(choice_logits) < 2:
        raise ValueError("need at least two choices")
    top = max(choice_logits)
    weights = [math.exp(x - top) for x in choice_logits]
    total = math.fsum(weights)
    probs = [w / total for w in weights]
    h = -math.fsum(p * math.log(p) for p in probs if p > 0.0)
    h = min(max(h, 0.0), math.log(len(probs)))
    return UncertaintyScore(candidate_id, "choice_entropy", h, higher_is_certain=False)


def avg_token_probability(per_token_probs: Sequence[float], candidate_id: str = "") -> UncertaintyScore:
    if not per_token_probs:
        raise ValueError("need at least one token probability")
    for p in per_token_probs:
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"token probability {p!r} outside [0, 1]")
    value = math.fsum(per_token_probs) / len(per_token_probs)
    return UncertaintyScore(candidate_id, "avg_token_prob", value, higher_is_certain=True)


_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def normalize_answer(text: str) -> str:
    text = text.strip()
    if text.casefold().startswith("answer:"):
        text = text[len("answer:"):]
    return " ".join(_PUNCT.sub(" ", text.casefold()).split())


def exact_match_judge(a: str, b: str) -> float:
    """Default consistency judge: 1.0 iff normalized answers are equal."""
    return 1.0 if normalize_answer(a) == normalize_answer(b) else 0.0


def mc_consistency(
    greedy_answer: str,
    samples: Sequence[str],
    judge: Callable[[str, str], float] | None = None,
    candidate_id: str = "",
) -> UncertaintyScore:
    """Mean judged consistency between the greedy answer and each sample."""
    if not samples:
        raise ValueError("need at least one sampled answer")
    judge = judge or exact_match_judge
    values = []
    for i, sample in enumerate(samples):
        try:
            v = float(judge(greedy_answer, sample))
        except Exception as exc:
            raise JudgeError(f"judge failed on sample {i}: {exc}") from exc
        if not 0.0 <= v <= 1.0:
            raise JudgeError(f"judge returned {v!r} for sample {i}, outside [0, 1]")
        values.append(v)
    return UncertaintyScore(candidate_id, "mc_consistency", math.fsum(values) / len(values), True)


def choice_logits_from(logprobs: Mapping[str, float], n_choices: int) -> list[float]:
    """Option-letter logprobs from first-position top-k, floored when missing."""
    floor = (min(logprobs.values()) if logprobs else 0.0) - 1.0
    out = []
    for letter in OPTION_LETTERS[:n_choices]:
        lp = None
        for tok, v in logprobs.items():
            if _norm_token(tok).strip("()") == letter.casefold():
                lp = v if lp is None else max(lp, v)
        out.append(floor if lp is None else lp)
    return out


def score_uncertainty(
    backend: Backend,
    query: Query,
    candidate,
    method: str,
    n_samples: int = MC_SAMPLES,
    judge: Callable[[str, str], float] | None = None,
    max_tokens: int = 64,
    strip_image_placeholders: bool = False,
) -> UncertaintyScore:
    """Answer-level uncertainty of the main answer prompt given one candidate."""
    if method not in METHODS:
        raise ValueError(f"unknown uncertainty method {method!r}")
    prompt = build_answer_prompt(query, [candidate], strip_image_placeholders=strip_image_placeholders)
    if method == "choice_entropy":
        if not query.choices:
            raise ScoringError("choice entropy needs a multiple-choice query")
        resp = backend.complete(
            prompt, temperature=0.0, max_tokens=1, logprobs=True, top_logprobs=DEFAULT_TOP_LOGPROBS
        )
        logits = choice_logits_from(resp.first_position_logprobs, len(query.choices))
        return choice_softmax_entropy(logits, candidate.id)
    if method == "avg_token_prob":
        resp = backend.complete(prompt, temperature=0.0, max_tokens=max_tokens, logprobs=True)
        if not resp.per_token_probs:
            raise ScoringError("backend returned no token probabilities")
        return avg_token_probability(resp.per_token_probs, candidate.id)
    greedy = backend.complete(prompt, temperature=0.0, max_tokens=max_tokens).generated_text or ""
    samples = [
        backend.complete(prompt, temperature=MC_TEMPERATURE, max_tokens=max_tokens, seed=i).generated_text
        or ""
        for i in range(n_samples)
    ]
    return mc_consistency(greedy, samples, judge, candidate.id)


def score_pool_uncertainty(
    backend: Backend,
    query: Query,
    pool: CandidatePool,
    method: str,
    concurrency_limit: int = 4,
    **kwargs,
) -> PoolScores:
    out = PoolScores()
    fn = lambda c: score_uncertainty(backend, query, c, method, **kwargs)  # noqa: E731
    for cand, score, err in _run_bounded(fn, list(pool.candidates), concurrency_limit):
        if err is None:
            out.scores.append(score)
        else:
            out.errors[cand.id] = err
    out.scores.sort(key=lambda s: s.candidate_id)
    if pool.candidates and not out.scores:
        raise BatchScoringError(out.errors)
    return out
