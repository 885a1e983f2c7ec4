"""Retrieve-rank-generate workflow and the analytical inference cost model."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .backends import Backend, BackendError
from .payloads import PayloadError
from .pools import CandidatePool, Query
from .prompts import TemplateError, benchmark_of, build_answer_prompt
from .scorers import BatchScoringError, HelpfulnessScore, PoolScores, score_pool


class PipelineError(RuntimeError):
    pass


@dataclass(frozen=True)
class RankedSelection:
    query_id: str
    ranked_ids: tuple[str, ...]
    scores: tuple[float, ...]
    k: int
    score_field: str = "raw_logit"
    feasibility_filter: bool = False
    dropped_ids: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "ranked_ids", tuple(self.ranked_ids))
        object.__setattr__(self, "scores", tuple(self.scores))
        object.__setattr__(self, "dropped_ids", tuple(self.dropped_ids))
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if len(self.ranked_ids) != len(self.scores):
            raise ValueError("ranked_ids and scores differ in length")
        if any(b > a for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError("scores must be non-increasing along the ranking")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("ranked_ids", "scores", "dropped_ids"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "RankedSelection":
        return cls(**d)


def rank_values(values: Mapping[str, float], k: int) -> tuple[list[str], list[float]]:
    """Top-k ids by descending value, ties broken by ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    order = sorted(values, key=lambda cid: (-values[cid], cid))[:k]
    return order, [values[c] for c in order]


def rank_candidates(
    scores: Sequence[HelpfulnessScore],
    k: int,
    query_id: str = "",
    feasibility_filter: bool = False,
) -> RankedSelection:
    """Sort candidates by helpfulness and keep the top ``k``.

    Ranks by the positive-label log-probability; if any score is approximate
    (a label was missing) the whole pool is ranked by ``p_c`` instead, so all
    candidates share one scale. With ``feasibility_filter`` candidates whose
    ``p_c`` falls below the pool mean are dropped before ranking.
    """
    if not scores:
        raise ValueError("cannot rank an empty score list")
    field_name = "p_c" if any(s.approximate for s in scores) else "raw_logit"
    kept = list(scores)
    dropped: list[str] = []
    if feasibility_filter:
        p_bar = math.fsum(s.p_c for s in scores) / len(scores)
        kept = [s for s in scores if s.p_c >= p_bar]
        dropped = sorted(s.candidate_id for s in scores if s.p_c < p_bar)
    values = {s.candidate_id: getattr(s, field_name) for s in kept}
    ids, vals = rank_values(values, k)
    return RankedSelection(query_id, ids, vals, k, field_name, feasibility_filter, dropped)


@dataclass(frozen=True)
class GenerationResult:
    query_id: str
    selected_ids: tuple[str, ...]
    answer_text: str | None
    backend_usage: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.answer_text is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selected_ids"] = list(self.selected_ids)
        return d


@dataclass(frozen=True)
class PipelineOutcome:
    generation: GenerationResult
    selection: RankedSelection | None
    scores: tuple[HelpfulnessScore, ...] = ()


def run_pipeline(
    query: Query,
    pool: CandidatePool,
    surrogate_backend: Backend,
    main_backend: Backend,
    k: int,
    template_id: str,
    concurrency_limit: int = 4,
    feasibility_filter: bool = False,
    strip_image_placeholders: bool = False,
    max_tokens: int = 64,
) -> PipelineOutcome:
    """Score the pool with the surrogate, select top-k, generate once with the main model.

    Probe failures are tolerated while at least ``min(k, len(pool))``
    candidates still score; otherwise, or if generation fails, the returned
    result carries no answer and an error note per failed stage.
    """
    errors: dict = {}
    try:
        scored: PoolScores = score_pool(surrogate_backend, query, pool, template_id, concurrency_limit)
    except BatchScoringError as exc:
        errors["probe"] = exc.errors
        return PipelineOutcome(GenerationResult(query.query_id, (), None, {}, errors), None)
    if scored.errors:
        errors["probe"] = scored.errors
    needed = min(k, len(pool))
    if len(scored.scores) < needed:
        errors["selection"] = f"only {len(scored.scores)} candidates scored, need {needed}"
        return PipelineOutcome(
            GenerationResult(query.query_id, (), None, {}, errors), None, tuple(scored.scores)
        )
    selection = rank_candidates(scored.scores, k, query.query_id, feasibility_filter)
    evidence = [pool.get(cid) for cid in selection.ranked_ids]
    bench = benchmark_of(template_id)
    query_for_answer = query if query.benchmark == bench else _with_benchmark(query, bench)
    try:
        prompt = build_answer_prompt(
            query_for_answer, evidence, strip_image_placeholders=strip_image_placeholders
        )
        resp = main_backend.complete(prompt, temperature=0.0, max_tokens=max_tokens)
    except (BackendError, PayloadError, TemplateError) as exc:
        errors["generation"] = f"{type(exc).__name__}: {exc}"
        return PipelineOutcome(
            GenerationResult(query.query_id, selection.ranked_ids, None, {}, errors),
            selection,
            tuple(scored.scores),
        )
    result = GenerationResult(
        query.query_id, selection.ranked_ids, resp.generated_text or "", dict(resp.usage), errors
    )
    return PipelineOutcome(result, selection, tuple(scored.scores))


def _with_benchmark(query: Query, bench: str) -> Query:
    from dataclasses import replace

    return replace(query, benchmark=bench)


@dataclass(frozen=True)
class CostProfile:
    """Per-request compute and latency for one model (GFLOPs, milliseconds)."""

    model_id: str
    params_b: float
    prefill_gflops: float
    decode_gflops_per_step: float
    prefill_latency_ms: float
    decode_latency_ms_per_step: float
    tokens: int

    def __post_init__(self):
        for name in (
            "params_b",
            "prefill_gflops",
            "decode_gflops_per_step",
            "prefill_latency_ms",
            "decode_latency_ms_per_step",
            "tokens",
        ):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{self.model_id}: {name} must be positive, got {value!r}")

    def request_gflops(self, decode_steps: float, include_decode: bool = True) -> float:
        return self.prefill_gflops + (decode_steps * self.decode_gflops_per_step if include_decode else 0.0)

    def request_latency_ms(self, decode_steps: float, include_decode: bool = True) -> float:
        extra = decode_steps * self.decode_latency_ms_per_step if include_decode else 0.0
        return self.prefill_latency_ms + extra


# (family, method) -> (small, large); figures are GFLOPs and milliseconds.
PUBLISHED_COSTS: dict[tuple[str, str], tuple[CostProfile, CostProfile]] = {
    ("qwen3-vl", "discriminative"): (
        CostProfile("Qwen3-VL-2B", 2.1, 991, 3, 0.0480, 0.0291, 289),
        CostProfile("Qwen3-VL-8B", 8.1, 4360, 15, 0.0638, 0.0377, 289),
    ),
    ("qwen3-vl", "uq"): (
        CostProfile("Qwen3-VL-2B", 2.1, 984, 101, 0.0471, 0.8422, 315),
        CostProfile("Qwen3-VL-8B", 8.1, 4328, 443, 0.0640, 1.1067, 315),
    ),
    ("ovis2.5", "discriminative"): (
        CostProfile("Ovis2.5-2B", 2.6, 1176, 3, 0.0727, 0.0252, 326),
        CostProfile("Ovis2.5-9B", 9.2, 5034, 15, 0.0871, 0.0344, 326),
    ),
    ("ovis2.5", "uq"): (
        CostProfile("Ovis2.5-2B", 2.6, 1169, 101, 0.0714, 0.7286, 352),
        CostProfile("Ovis2.5-9B", 9.2, 5003, 443, 0.0875, 1.0021, 352),
    ),
    ("internvl3.5", "discriminative"): (
        CostProfile("InternVL3.5-2B", 2.3, 1427, 4, 0.0532, 0.0304, 403),
        CostProfile("InternVL3.5-8B", 8.5, 6203, 15, 0.0789, 0.0393, 403),
    ),
    ("internvl3.5", "uq"): (
        CostProfile("InternVL3.5-2B", 2.3, 1421, 103, 0.0527, 0.8529, 430),
        CostProfile("InternVL3.5-8B", 8.5, 6172, 449, 0.0776, 1.1180, 430),
    ),
    ("gemma3", "discriminative"): (
        CostProfile("Gemma3-4B", 4.3, 2827, 8, 0.1107, 0.0417, 365),
        CostProfile("Gemma3-12B", 12.2, 8560, 24, 0.1354, 0.0607, 365),
    ),
    ("gemma3", "uq"): (
        CostProfile("Gemma3-4B", 4.3, 2788, 227, 0.1097, 1.2162, 388),
        CostProfile("Gemma3-12B", 12.2, 8442, 688, 0.1340, 1.7628, 388),
    ),
}

FAMILIES = ("qwen3-vl", "ovis2.5", "internvl3.5", "gemma3")


def family_profiles(family: str) -> dict[str, CostProfile]:
    """Surrogate/main discriminative profiles and their answer-level UQ counterparts."""
    try:
        (s, m), (us, um) = PUBLISHED_COSTS[(family, "discriminative")], PUBLISHED_COSTS[(family, "uq")]
    except KeyError:
        raise KeyError(f"unknown model family {family!r}; known: {', '.join(FAMILIES)}") from None
    return {"surrogate": s, "main": m, "uq_surrogate": us, "uq_main": um}


@dataclass(frozen=True)
class CostEstimate:
    ours_gflops: float
    standard_rerank_gflops: float
    ratio: float
    decode_ratio: float
    ours_latency_ms: float = 0.0
    standard_rerank_latency_ms: float = 0.0
    ours_cheaper: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def estimate_cost(
    n_candidates: int,
    surrogate: CostProfile,
    main: CostProfile,
    decode_steps_ours: float = 1.0,
    decode_steps_uq: float = 1.0,
    uq_profile: CostProfile | None = None,
    include_decode: bool = True,
) -> CostEstimate:
    """Compute of surrogate scanning versus reranking with the main model.

    ours     = N * cost(surrogate) + cost(main)
    standard = (N + 1) * cost(main)

    where cost(M) is one request: prefill plus ``decode_steps_ours`` decode
    steps (prefill only when ``include_decode`` is false). ``decode_ratio``
    compares answer-level UQ decoding, ``decode_steps_uq`` steps of
    ``uq_profile`` (default: the surrogate itself), to the probe's decoding
    on the surrogate. The published per-family rows report aggregate decode GFLOPs, so with
    those profiles both step counts stay at 1.
    """
    if n_candidates < 1:
        raise ValueError("n_candidates must be >= 1")
    # Totals are summed exactly and rounded once, so equal per-request costs
    # give equal totals and ``ours_cheaper`` follows the exact comparison.
    per_s = Fraction(surrogate.request_gflops(decode_steps_ours, include_decode))
    per_m = Fraction(main.request_gflops(decode_steps_ours, include_decode))
    ours = n_candidates * per_s + per_m
    standard = (n_candidates + 1) * per_m
    lat_ours = n_candidates * surrogate.request_latency_ms(decode_steps_ours, include_decode) + (
        main.request_latency_ms(decode_steps_ours, include_decode)
    )
    lat_std = (n_candidates + 1) * main.request_latency_ms(decode_steps_ours, include_decode)
    uq = uq_profile or surrogate
    decode_ratio = (decode_steps_uq * uq.decode_gflops_per_step) / (
        decode_steps_ours * surrogate.decode_gflops_per_step
    )
    return CostEstimate(
        float(ours), float(standard), float(standard / ours), decode_ratio, lat_ours, lat_std, ours < standard
    )
