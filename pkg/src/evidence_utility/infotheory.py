"""Discrete information-theoretic quantities and theorem checks.

Everything here works in nats on small finite answer spaces and is written as
plain Python over tuples: the distributions involved have at most a handful of
outcomes, and the theorem sweeps call these functions tens of thousands of
times, where per-call numpy overhead dominates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

NORMALIZATION_TOL = 1e-9
ORDER_SLACK = 1e-12
CONVEXITY_SLACK = 1e-10

# Returned by kl_divergence when p is not absolutely continuous w.r.t. q.
KL_INFINITE = math.inf


class DistributionError(ValueError):
    """A probability vector violates its invariants."""


class AssumptionViolation(ValueError):
    """A theorem precondition does not hold for the supplied inputs."""

    assumption = "unspecified"


class InfeasibleCandidateError(AssumptionViolation):
    """A candidate has p_c below the baseline helpfulness p_bar."""

    assumption = "feasibility (p_c >= p_bar)"


class BelowMeanUsageError(AssumptionViolation):
    """A candidate's evidence usage lambda(c) is below lambda_bar."""

    assumption = "usage above mean (lambda(c) >= lambda_bar)"


class MisalignedUsageError(AssumptionViolation):
    """Helpfulness order and usage order disagree for a candidate pair."""

    assumption = "monotone alignment (p_c1 >= p_c2 => lambda(c1) >= lambda(c2))"


def _xlogy_ratio(p: float, q: float) -> float:
    # p * ln(p / q) with 0 ln 0 = 0; caller guarantees q > 0 whenever p > 0
    if p == 0.0:
        return 0.0
    return p * math.log(p / q)


@dataclass(frozen=True)
class DiscreteDistribution:
    """A probability vector over a finite, ordered set of outcome labels."""

    outcomes: tuple
    probs: tuple

    def __post_init__(self):
        outcomes = tuple(self.outcomes)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "probs", probs)
        if len(outcomes) != len(probs):
            raise DistributionError(
                f"{len(outcomes)} outcomes but {len(probs)} probabilities"
            )
        if not outcomes:
            raise DistributionError("empty outcome set")
        if len(set(outcomes)) != len(outcomes):
            raise DistributionError("outcome labels must be unique")
        for p in probs:
            if not (p >= 0.0) or p > 1.0 or math.isnan(p):
                raise DistributionError(f"probability {p!r} outside [0, 1]")
        total = math.fsum(probs)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise DistributionError(f"probabilities sum to {total!r}, not 1")

    @classmethod
    def from_mapping(cls, mapping: Mapping[Hashable, float]) -> "DiscreteDistribution":
        return cls(tuple(mapping), tuple(mapping.values()))

    @classmethod
    def bernoulli(cls, p: float) -> "DiscreteDistribution":
        """Two-outcome distribution over (1, 0) with P(1) = p."""
        return cls((1, 0), (p, 1.0 - p))

    def __len__(self) -> int:
        return len(self.probs)

    def prob(self, outcome) -> float:
        return self.probs[self.outcomes.index(outcome)]

    def argmax(self):
        best = max(range(len(self.probs)), key=lambda i: (self.probs[i], -i))
        return self.outcomes[best]


def entropy(d: DiscreteDistribution) -> float:
    """Shannon entropy in nats."""
    return -math.fsum(p * math.log(p) for p in d.probs if p > 0.0)


def kl_divergence(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """KL(p || q) in nats; ``KL_INFINITE`` when p puts mass where q has none."""
    if p.outcomes != q.outcomes:
        raise DistributionError("KL divergence needs identical outcome lists")
    terms = []
    for pi, qi in zip(p.probs, q.probs):
        if pi > 0.0 and qi == 0.0:
            return KL_INFINITE
        terms.append(_xlogy_ratio(pi, qi))
    # Rounding can push a true zero slightly negative.
    return max(math.fsum(terms), 0.0)


@dataclass(frozen=True)
class BernoulliHelpfulness:
    """Helpfulness probability of one candidate against the baseline rate."""

    p_c: float
    p_bar: float

    def __post_init__(self):
        if not 0.0 <= self.p_c <= 1.0:
            raise ValueError(f"p_c={self.p_c!r} outside [0, 1]")
        if not 0.0 < self.p_bar < 1.0:
            raise ValueError(f"p_bar={self.p_bar!r} must lie strictly inside (0, 1)")


def bernoulli_ig(h: BernoulliHelpfulness) -> float:
    """Information gain on the latent helpfulness variable.

    KL(Bern(p_c) || Bern(p_bar)), strictly increasing in p_c on [p_bar, 1].
    """
    q, pb = h.p_c, h.p_bar
    return max(_xlogy_ratio(q, pb) + _xlogy_ratio(1.0 - q, 1.0 - pb), 0.0)


@dataclass(frozen=True)
class MixtureAnswerModel:
    """Answer distributions P_lambda = (1 - lambda) P0 + lambda P1.

    ``lambda_map`` gives each candidate's evidence usage; ``lambda_bar`` is
    its mean under the candidate prior, so the marginal answer distribution
    is P_{lambda_bar}.
    """

    p0: DiscreteDistribution
    p1: DiscreteDistribution
    lambda_map: Mapping[Hashable, float]
    lambda_bar: float
    prior: Mapping[Hashable, float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.p0.outcomes != self.p1.outcomes:
            raise DistributionError("p0 and p1 must share one outcome list")
        object.__setattr__(self, "lambda_map", dict(self.lambda_map))
        if not self.lambda_map:
            raise ValueError("lambda_map is empty")
        for cid, lam in self.lambda_map.items():
            if not 0.0 <= lam <= 1.0:
                raise ValueError(f"lambda({cid!r})={lam!r} outside [0, 1]")
        expected = _prior_mean(self.lambda_map, self.prior)
        if abs(expected - self.lambda_bar) > NORMALIZATION_TOL:
            raise ValueError(
                f"lambda_bar={self.lambda_bar!r} differs from the prior mean {expected!r}"
            )

    @classmethod
    def from_lambdas(
        cls,
        p0: DiscreteDistribution,
        p1: DiscreteDistribution,
        lambda_map: Mapping[Hashable, float],
        prior: Mapping[Hashable, float] | None = None,
    ) -> "MixtureAnswerModel":
        """Build the model with lambda_bar computed from the prior (uniform by default)."""
        return cls(p0, p1, lambda_map, _prior_mean(lambda_map, prior), prior)

    @property
    def marginal(self) -> DiscreteDistribution:
        return mixture_distribution(self, self.lambda_bar)


def _prior_mean(values: Mapping[Hashable, float], prior: Mapping[Hashable, float] | None) -> float:
    if prior is None:
        return math.fsum(values.values()) / len(values)
    if set(prior) != set(values):
        raise ValueError("prior must cover exactly the candidates of lambda_map")
    total = math.fsum(prior.values())
    if abs(total - 1.0) > NORMALIZATION_TOL or min(prior.values()) < 0.0:
        raise ValueError("prior must be a probability vector")
    return math.fsum(prior[c] * values[c] for c in values)


def mixture_distribution(m: MixtureAnswerModel, lam: float) -> DiscreteDistribution:
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mixture weight {lam!r} outside [0, 1]")
    if lam == 0.0:
        return m.p0
    if lam == 1.0:
        return m.p1
    probs = tuple((1.0 - lam) * a + lam * b for a, b in zip(m.p0.probs, m.p1.probs))
    return DiscreteDistribution(m.p0.outcomes, probs)


def mixture_divergence(m: MixtureAnswerModel, lam: float) -> float:
    """g(lam) = KL(P_lam || P_lambda_bar); convex on [0, 1], zero at lambda_bar."""
    return kl_divergence(mixture_distribution(m, lam), m.marginal)


def answer_space_ig(m: MixtureAnswerModel, candidate_id) -> float:
    """IG(Y; C=c) under the mixture model."""
    try:
        lam = m.lambda_map[candidate_id]
    except KeyError:
        raise KeyError(f"unknown candidate {candidate_id!r}") from None
    return mixture_divergence(m, lam)


@dataclass(frozen=True)
class TheoremCheckRecord:
    premise_holds: bool
    conclusion_holds: bool
    lhs_values: tuple[float, float]
    rhs_values: tuple[float, float]

    @property
    def violated(self) -> bool:
        return self.premise_holds and not self.conclusion_holds


def _ge(a: float, b: float, slack: float = ORDER_SLACK) -> bool:
    return a >= b - slack


def check_theorem2(p_bar: float, p1: float, p2: float) -> TheoremCheckRecord:
    """Check IG(Z; c1) >= IG(Z; c2)  <=>  p_c1 >= p_c2 on the feasible set.

    The premise is feasibility of both candidates. The conclusion requires
    both implication directions; IG comparisons carry ``ORDER_SLACK`` so
    that rounding in near-equal divergences is not read as an order flip.
    """
    if not 0.0 < p_bar < 1.0:
        raise ValueError(f"p_bar={p_bar!r} must lie strictly inside (0, 1)")
    for name, p in (("p1", p1), ("p2", p2)):
        if not p_bar <= p <= 1.0:
            raise InfeasibleCandidateError(f"{name}={p!r} outside the feasible set [{p_bar!r}, 1]")
    f1 = bernoulli_ig(BernoulliHelpfulness(p1, p_bar))
    f2 = bernoulli_ig(BernoulliHelpfulness(p2, p_bar))
    forward = (not f1 > f2 + ORDER_SLACK or p1 > p2) and (not f2 > f1 + ORDER_SLACK or p2 > p1)
    backward = (not p1 >= p2 or _ge(f1, f2)) and (not p2 >= p1 or _ge(f2, f1))
    return TheoremCheckRecord(True, forward and backward, (f1, f2), (p1, p2))


def check_theorem1(
    m: MixtureAnswerModel,
    c1,
    c2,
    helpfulness: Mapping[Hashable, float],
    p_bar: float,
    ig_y: Callable[[Hashable], float] | None = None,
) -> TheoremCheckRecord:
    """Check IG(Z; c1) >= IG(Z; c2)  =>  IG(Y; c1) >= IG(Y; c2).

    ``ig_y`` overrides how IG(Y; c) is computed, e.g. with an independent oracle.

    Raises a subclass of :class:`AssumptionViolation` naming the failed
    precondition when either candidate is infeasible, uses its evidence less
    than average, or the pair's usage order contradicts its helpfulness order.
    """
    if not 0.0 < p_bar < 1.0:
        raise ValueError(f"p_bar={p_bar!r} must lie strictly inside (0, 1)")
    for c in (c1, c2):
        if c not in m.lambda_map:
            raise KeyError(f"unknown candidate {c!r}")
        if helpfulness[c] < p_bar:
            raise InfeasibleCandidateError(f"candidate {c!r}: p_c={helpfulness[c]!r} < p_bar={p_bar!r}")
        if m.lambda_map[c] < m.lambda_bar:
            raise BelowMeanUsageError(
                f"candidate {c!r}: lambda={m.lambda_map[c]!r} < lambda_bar={m.lambda_bar!r}"
            )
    pa, pb = helpfulness[c1], helpfulness[c2]
    la, lb = m.lambda_map[c1], m.lambda_map[c2]
    if (pa >= pb and la < lb) or (pb >= pa and lb < la):
        raise MisalignedUsageError(
            f"candidates {c1!r}, {c2!r}: p=({pa!r}, {pb!r}) but lambda=({la!r}, {lb!r})"
        )
    iz1 = bernoulli_ig(BernoulliHelpfulness(pa, p_bar))
    iz2 = bernoulli_ig(BernoulliHelpfulness(pb, p_bar))
    ig_y = ig_y or (lambda c: answer_space_ig(m, c))
    iy1, iy2 = ig_y(c1), ig_y(c2)
    return TheoremCheckRecord(iz1 >= iz2, _ge(iy1, iy2), (iz1, iz2), (iy1, iy2))


def feasible_candidates(
    helpfulness: Mapping[Hashable, float],
    prior: Mapping[Hashable, float] | None = None,
) -> list:
    """Candidate ids with p_c >= p_bar, p_bar being the prior mean of p_c."""
    p_bar = _prior_mean(helpfulness, prior)
    return [c for c, p in helpfulness.items() if p >= p_bar]


def baseline_rate(
    helpfulness: Mapping[Hashable, float],
    prior: Mapping[Hashable, float] | None = None,
) -> float:
    return _prior_mean(helpfulness, prior)


def normalize(weights: Sequence[float]) -> tuple[float, ...]:
    total = math.fsum(weights)
    if total <= 0.0:
        raise DistributionError("weights must have positive total")
    return tuple(w / total for w in weights)
