"""Synthetic worlds for checking the ranking theorems and comparing strategies.

A world fixes an answer space with two reference answer distributions P0
(evidence ignored) and P1 (evidence used). Each query has a pool of candidates
with a latent helpfulness score ``s``; the probability the candidate is
helpful is ``p_c = 1 - F(-s / noise_scale)`` for a logistic or gaussian noise
CDF F, and its evidence usage ``lambda_c`` is a nondecreasing function of
``p_c``. Relevance is ``s`` plus independent noise, so relevance ranking is a
degraded view of utility.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit, ndtr

from .infotheory import (
    CONVEXITY_SLACK,
    ORDER_SLACK,
    DiscreteDistribution,
    MixtureAnswerModel,
    answer_space_ig,
    check_theorem1,
    check_theorem2,
    entropy,
    kl_divergence,
    mixture_distribution,
    mixture_divergence,
)
from .seeding import make_rng

STRATEGIES = ("utility_pc", "relevance_score", "choice_entropy_proxy", "random")
NOISE_CDFS = ("logistic", "gaussian")
LAMBDA_MAPS = ("identity", "logistic")


@dataclass(frozen=True)
class SimConfig:
    n_queries: int = 200
    candidates_per_query: int = 10
    gt_per_query: int = 3
    answer_space_min: int = 2
    answer_space_max: int = 8
    gt_shift: float = 1.0
    neg_shift: float = -1.0
    noise_cdf: str = "logistic"
    noise_scale: float = 1.0
    lambda_map: str = "identity"
    lambda_slope: float = 1.5
    lambda_offset: float = 0.0
    relevance_noise: float = 2.0
    p1_concentration: float = 0.3

    def validate(self) -> list[str]:
        problems = []
        if self.n_queries < 1:
            problems.append("n_queries must be >= 1")
        if self.candidates_per_query < 2:
            problems.append("candidates_per_query must be >= 2")
        if not 0 <= self.gt_per_query <= self.candidates_per_query:
            problems.append("gt_per_query must lie in [0, candidates_per_query]")
        if not 2 <= self.answer_space_min <= self.answer_space_max <= 8:
            problems.append("answer space size must satisfy 2 <= min <= max <= 8")
        if self.noise_cdf not in NOISE_CDFS:
            problems.append(f"noise_cdf must be one of {NOISE_CDFS}")
        if not self.noise_scale > 0:
            problems.append("noise_scale must be positive")
        if self.lambda_map not in LAMBDA_MAPS:
            problems.append(f"lambda_map must be one of {LAMBDA_MAPS}")
        if self.lambda_slope <= 0:
            problems.append("lambda_slope must be positive")
        if self.relevance_noise < 0:
            problems.append("relevance_noise must be >= 0")
        if self.p1_concentration <= 0:
            problems.append("p1_concentration must be positive")
        return problems


@dataclass(frozen=True)
class SyntheticCandidate:
    id: str
    latent: float
    noise_scale: float
    p_c: float
    lambda_c: float
    relevance_score: float
    is_gt: bool


@dataclass(frozen=True)
class SyntheticQuery:
    query_id: str
    candidates: tuple[SyntheticCandidate, ...]

    @property
    def p_bar(self) -> float:
        return math.fsum(c.p_c for c in self.candidates) / len(self.candidates)

    @property
    def lambda_bar(self) -> float:
        return math.fsum(c.lambda_c for c in self.candidates) / len(self.candidates)

    @property
    def helpfulness(self) -> dict[str, float]:
        return {c.id: c.p_c for c in self.candidates}

    def get(self, cid: str) -> SyntheticCandidate:
        for c in self.candidates:
            if c.id == cid:
                return c
        raise KeyError(cid)


@dataclass(frozen=True)
class SyntheticWorld:
    answer_space: tuple[str, ...]
    p0: DiscreteDistribution
    p1: DiscreteDistribution
    queries: tuple[SyntheticQuery, ...]
    seed: int
    config: SimConfig

    @property
    def correct_answer(self) -> str:
        return self.p1.argmax()

    def model(self, query: SyntheticQuery) -> MixtureAnswerModel:
        return MixtureAnswerModel.from_lambdas(
            self.p0, self.p1, {c.id: c.lambda_c for c in query.candidates}
        )

    def query(self, query_id: str) -> SyntheticQuery:
        for q in self.queries:
            if q.query_id == query_id:
                return q
        raise KeyError(query_id)


def helpfulness_probability(latent, noise_cdf: str, noise_scale: float):
    """P(latent + noise >= 0) = 1 - F(-latent / scale) for the chosen noise CDF."""
    x = np.asarray(latent, dtype=float) / noise_scale
    if noise_cdf == "logistic":
        return expit(x)
    if noise_cdf == "gaussian":
        return ndtr(x)
    raise ValueError(f"unknown noise CDF {noise_cdf!r}")


def usage_from_helpfulness(p, config: SimConfig):
    """Evidence usage lambda as a nondecreasing function of p_c."""
    p = np.asarray(p, dtype=float)
    if config.lambda_map == "identity":
        return p
    q = np.clip(p, 1e-12, 1.0 - 1e-12)
    return expit(config.lambda_slope * np.log(q / (1.0 - q)) + config.lambda_offset)


def _simplex(rng: np.random.Generator, alpha: float, size: int) -> DiscreteDistribution:
    w = rng.dirichlet(np.full(size, alpha))
    w = np.maximum(w, 1e-12)
    w = w / w.sum()
    return DiscreteDistribution(tuple(f"y{i}" for i in range(size)), tuple(float(v) for v in w))


def generate_world(config: SimConfig, seed: int) -> SyntheticWorld:
    problems = config.validate()
    if problems:
        raise ValueError("; ".join(problems))
    rng = make_rng(seed, "world")
    size = int(rng.integers(config.answer_space_min, config.answer_space_max + 1))
    p0 = _simplex(rng, 1.0, size)
    p1 = _simplex(rng, config.p1_concentration, size)
    queries = []
    n = config.candidates_per_query
    for qi in range(config.n_queries):
        qrng = make_rng(seed, "query", qi)
        is_gt = np.zeros(n, dtype=bool)
        is_gt[qrng.choice(n, size=config.gt_per_query, replace=False)] = True
        latent = qrng.standard_normal(n) + np.where(is_gt, config.gt_shift, config.neg_shift)
        relevance = latent + config.relevance_noise * qrng.standard_normal(n)
        p = helpfulness_probability(latent, config.noise_cdf, config.noise_scale)
        lam = usage_from_helpfulness(p, config)
        cands = tuple(
            SyntheticCandidate(
                id=f"q{qi}-c{j:02d}",
                latent=float(latent[j]),
                noise_scale=config.noise_scale,
                p_c=float(p[j]),
                lambda_c=float(lam[j]),
                relevance_score=float(relevance[j]),
                is_gt=bool(is_gt[j]),
            )
            for j in range(n)
        )
        queries.append(SyntheticQuery(f"q{qi}", cands))
    return SyntheticWorld(p0.outcomes, p0, p1, tuple(queries), seed, config)


def brute_force_ig_y(world: SyntheticWorld, query_id: str, candidate_id: str) -> float:
    """KL(P_lambda(c) || P_lambda_bar) by explicit summation over the answer space."""
    query = world.query(query_id)
    lam = query.get(candidate_id).lambda_c
    lam_bar = sum(c.lambda_c for c in query.candidates) / len(query.candidates)
    total = 0.0
    for a, b in zip(world.p0.probs, world.p1.probs):
        cond = (1.0 - lam) * a + lam * b
        marg = (1.0 - lam_bar) * a + lam_bar * b
        if cond > 0.0:
            if marg == 0.0:
                return math.inf
            total += cond * math.log(cond / marg)
    return max(total, 0.0)


@dataclass(frozen=True)
class StrategyOutcome:
    strategy_name: str
    mean_top1_ig_y: float
    gt_hit_rate_by_k: tuple[float, ...]
    answer_accuracy_by_k: tuple[float, ...]
    k_values: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("gt_hit_rate_by_k", "answer_accuracy_by_k", "k_values"):
            d[key] = list(d[key])
        return d


def _strategy_values(strategy: str, world: SyntheticWorld, query: SyntheticQuery, seed: int) -> dict:
    if strategy == "utility_pc":
        return {c.id: c.p_c for c in query.candidates}
    if strategy == "relevance_score":
        return {c.id: c.relevance_score for c in query.candidates}
    if strategy == "choice_entropy_proxy":
        m = world.model(query)
        return {c.id: -entropy(mixture_distribution(m, c.lambda_c)) for c in query.candidates}
    if strategy == "random":
        perm = make_rng(seed, "random_strategy", query.query_id).permutation(len(query.candidates))
        return {c.id: float(perm[i]) for i, c in enumerate(query.candidates)}
    raise ValueError(f"unknown strategy {strategy!r}; known: {', '.join(STRATEGIES)}")


def _draw_answers(dist: DiscreteDistribution, uniforms: np.ndarray) -> list:
    cdf = np.cumsum(dist.probs)
    idx = np.minimum(np.searchsorted(cdf, uniforms, side="right"), len(cdf) - 1)
    return [dist.outcomes[int(i)] for i in idx]


def run_strategy_comparison(
    world: SyntheticWorld,
    strategies: Sequence[str] = STRATEGIES,
    k_values: Sequence[int] = (1, 3, 5),
    seed: int = 0,
    answer_draws: int = 8,
) -> list[StrategyOutcome]:
    """Rank each query's pool per strategy, then score the top-k selections.

    Answers are drawn from the mixture at the mean usage of the selected
    evidence. Draws reuse the same uniforms per (query, k) across strategies,
    so identical selections yield identical outcomes.
    """
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}; known: {', '.join(STRATEGIES)}")
    if any(k < 1 for k in k_values):
        raise ValueError("k values must be >= 1")
    correct = world.correct_answer
    uniforms = {
        (q.query_id, k): make_rng(seed, "answers", q.query_id, k).uniform(size=answer_draws)
        for q in world.queries
        for k in k_values
    }
    outcomes = []
    for strategy in strategies:
        top1_ig = []
        hits = {k: [] for k in k_values}
        accs = {k: [] for k in k_values}
        for q in world.queries:
            values = _strategy_values(strategy, world, q, seed)
            order = sorted(values, key=lambda cid: (-values[cid], cid))
            m = world.model(q)
            top1_ig.append(answer_space_ig(m, order[0]))
            for k in k_values:
                selected = order[:k]
                gt = sum(q.get(c).is_gt for c in selected)
                hits[k].append(gt / min(k, len(order)))
                lam_s = math.fsum(q.get(c).lambda_c for c in selected) / len(selected)
                answers = _draw_answers(mixture_distribution(m, lam_s), uniforms[(q.query_id, k)])
                accs[k].append(sum(a == correct for a in answers) / len(answers))
        outcomes.append(
            StrategyOutcome(
                strategy,
                math.fsum(top1_ig) / len(top1_ig),
                tuple(100.0 * math.fsum(hits[k]) / len(hits[k]) for k in k_values),
                tuple(math.fsum(accs[k]) / len(accs[k]) for k in k_values),
                tuple(k_values),
            )
        )
    return outcomes


@dataclass
class SweepSummary:
    name: str
    n_checks: int = 0
    violations: int = 0
    examples: list = field(default_factory=list)

    def record(self, ok: bool, detail=None) -> None:
        self.n_checks += 1
        if not ok:
            self.violations += 1
            if len(self.examples) < 5:
                self.examples.append(detail)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "n_checks": self.n_checks,
            "violations": self.violations,
            "examples": [str(e) for e in self.examples],
        }


def theorem2_sweep(n_draws: int = 10_000, seed: int = 0) -> SweepSummary:
    """Random feasible (p_bar, p1, p2) triples, with some exact ties and boundary points."""
    rng = make_rng(seed, "theorem2")
    summary = SweepSummary("theorem2_biconditional")
    p_bar = rng.uniform(0.01, 0.99, n_draws)
    p1 = rng.uniform(p_bar, 1.0)
    p2 = rng.uniform(p_bar, 1.0)
    kind = rng.uniform(size=n_draws)
    for i in range(n_draws):
        pb, a, b = float(p_bar[i]), float(p1[i]), float(p2[i])
        if kind[i] < 0.05:
            b = a
        elif kind[i] < 0.10:
            a = pb
        elif kind[i] < 0.12:
            a = 1.0
        rec = check_theorem2(pb, a, b)
        summary.record(not rec.violated, (pb, a, b, rec))
    return summary


def _theorem1_config(rng: np.random.Generator) -> SimConfig:
    return SimConfig(
        n_queries=1,
        candidates_per_query=int(rng.integers(4, 11)),
        gt_per_query=int(rng.integers(1, 4)),
        answer_space_min=2,
        answer_space_max=8,
        gt_shift=float(rng.uniform(0.0, 2.0)),
        neg_shift=float(rng.uniform(-2.0, 0.0)),
        noise_cdf=NOISE_CDFS[int(rng.integers(2))],
        noise_scale=float(rng.uniform(0.2, 3.0)),
        lambda_map=LAMBDA_MAPS[int(rng.integers(2))],
        lambda_slope=float(rng.uniform(0.5, 3.0)),
        lambda_offset=float(rng.uniform(-1.0, 1.0)),
        p1_concentration=float(rng.uniform(0.2, 2.0)),
    )


def eligible_candidates(world: SyntheticWorld, query: SyntheticQuery) -> list[SyntheticCandidate]:
    """Candidates in the theorem's domain: p_c >= p_bar and lambda_c >= lambda_bar."""
    m = world.model(query)
    p_bar = query.p_bar
    return [c for c in query.candidates if c.p_c >= p_bar and m.lambda_map[c.id] >= m.lambda_bar]


def theorem1_sweep(n_worlds: int = 1000, seed: int = 0, brute_force: bool = True) -> SweepSummary:
    """Every ordered eligible candidate pair across randomly configured worlds.

    With ``brute_force`` IG(Y) comes from direct summation instead of the library path.
    """
    rng = make_rng(seed, "theorem1")
    summary = SweepSummary("theorem1_implication")
    for w in range(n_worlds):
        world = generate_world(_theorem1_config(rng), int(rng.integers(2**62)))
        for q in world.queries:
            m = world.model(q)
            p_bar = q.p_bar
            if not 0.0 < p_bar < 1.0:
                continue
            elig = eligible_candidates(world, q)
            help_map = q.helpfulness
            ig_y = None
            if brute_force:
                ig = {c.id: brute_force_ig_y(world, q.query_id, c.id) for c in elig}
                ig_y = ig.__getitem__
            for a in elig:
                for b in elig:
                    rec = check_theorem1(m, a.id, b.id, help_map, p_bar, ig_y)
                    summary.record(not rec.violated, (w, q.query_id, a.id, b.id, rec))
    return summary


def random_mixture(rng: np.random.Generator, size: int | None = None):
    size = size or int(rng.integers(2, 9))
    outcomes = tuple(f"y{i}" for i in range(size))

    def dist():
        w = rng.dirichlet(np.full(size, float(rng.uniform(0.2, 2.0))))
        w = np.maximum(w, 1e-12)
        return DiscreteDistribution(outcomes, tuple(float(v) for v in w / w.sum()))

    return dist(), dist()


def lemma_sweep(n_instances: int = 1000, seed: int = 0, grid: int = 21) -> dict[str, SweepSummary]:
    """Zero at lambda_bar, convexity and monotonicity on [lambda_bar, 1] of g."""
    rng = make_rng(seed, "lemmas")
    zero = SweepSummary("g_zero_at_mean")
    convex = SweepSummary("g_convex")
    mono = SweepSummary("g_nondecreasing_above_mean")
    lams = np.linspace(0.0, 1.0, grid)
    for i in range(n_instances):
        p0, p1 = random_mixture(rng)
        lam_bar = float(rng.uniform())
        m = MixtureAnswerModel(p0, p1, {"c": lam_bar}, lam_bar)
        g0 = mixture_divergence(m, lam_bar)
        zero.record(abs(g0) <= ORDER_SLACK, (i, g0))
        for _ in range(5):
            l1, l2, t = (float(v) for v in rng.uniform(size=3))
            lhs = mixture_divergence(m, t * l1 + (1 - t) * l2)
            rhs = t * mixture_divergence(m, l1) + (1 - t) * mixture_divergence(m, l2)
            convex.record(lhs <= rhs + CONVEXITY_SLACK, (i, l1, l2, t, lhs, rhs))
        above = [lam_bar] + [float(x) for x in lams if x >= lam_bar]
        values = [mixture_divergence(m, x) for x in above]
        for a, b in zip(values, values[1:]):
            mono.record(a <= b + CONVEXITY_SLACK, (i, a, b))
    return {s.name: s for s in (zero, convex, mono)}


def kl_identity_sweep(n_pairs: int = 1000, seed: int = 0) -> SweepSummary:
    """KL >= 0 for random pairs, and KL(p, p) == 0."""
    rng = make_rng(seed, "kl_identity")
    summary = SweepSummary("kl_nonnegative_identity")
    for i in range(n_pairs):
        p, q = random_mixture(rng)
        d = kl_divergence(p, q)
        summary.record(d >= 0.0 and (d > 0.0) == (p != q), (i, d))
        summary.record(kl_divergence(p, p) == 0.0, (i, "self"))
    return summary


def with_overrides(config: SimConfig, **overrides) -> SimConfig:
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})
