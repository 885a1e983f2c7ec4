"""Candidate pools: construction regimes, GT-oracle selection, JSONL I/O."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .seeding import make_rng

MAX_FORCED_GT = 5
FIXED_HARD_NEGATIVES = 5

REGIMES = ("benchmark_default", "pure_retrieve", "gt_hard_neg", "gt_hard_neg_stochastic")


class PoolError(ValueError):
    pass


class PoolFileError(PoolError):
    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Candidate:
    id: str
    payload_ref: str
    is_ground_truth: bool = False
    retrieval_score: float | None = None
    category: str | None = None

    def __post_init__(self):
        if not self.id:
            raise PoolError("candidate id must be non-empty")


@dataclass(frozen=True)
class CandidatePool:
    query_id: str
    candidates: tuple[Candidate, ...]
    regime: str = "benchmark_default"
    target_size: int = 10

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if self.regime not in REGIMES:
            raise PoolError(f"pool {self.query_id!r}: unknown regime {self.regime!r}")
        if self.target_size < 1:
            raise PoolError(f"pool {self.query_id!r}: target_size must be >= 1")
        ids = [c.id for c in self.candidates]
        dup = _first_duplicate(ids)
        if dup is not None:
            raise PoolError(f"pool {self.query_id!r}: duplicate candidate id {dup!r}")
        dup = _first_duplicate([c.payload_ref for c in self.candidates])
        if dup is not None:
            raise PoolError(f"pool {self.query_id!r}: duplicate payload ref {dup!r}")
        if len(self.candidates) > self.target_size:
            raise PoolError(
                f"pool {self.query_id!r}: {len(self.candidates)} candidates exceed target {self.target_size}"
            )

    @property
    def under_filled(self) -> bool:
        return len(self.candidates) < self.target_size

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.candidates]

    @property
    def gt_ids(self) -> set[str]:
        return {c.id for c in self.candidates if c.is_ground_truth}

    def __len__(self) -> int:
        return len(self.candidates)

    def get(self, candidate_id: str) -> Candidate:
        for c in self.candidates:
            if c.id == candidate_id:
                return c
        raise KeyError(candidate_id)

    def to_dict(self) -> dict:
        return {
            "query_id": self.query_id,
            "regime": self.regime,
            "target_size": self.target_size,
            "under_filled": self.under_filled,
            "candidates": [asdict(c) for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, record: dict) -> "CandidatePool":
        cands = tuple(Candidate(**c) for c in record["candidates"])
        return cls(
            query_id=str(record["query_id"]),
            candidates=cands,
            regime=record.get("regime", "benchmark_default"),
            target_size=int(record.get("target_size", max(len(cands), 1))),
        )


@dataclass(frozen=True)
class Query:
    """The question a pool is built for.

    ``image_ref`` is the query's own image (MRAG-Bench style); text-only
    queries (Visual-RAG style) leave it unset.
    """

    query_id: str
    text: str
    choices: tuple[str, ...] | None = None
    image_ref: str | None = None
    gold_answer: str | None = None
    category: str | None = None
    benchmark: str = "visualrag"

    def __post_init__(self):
        if self.choices is not None:
            object.__setattr__(self, "choices", tuple(self.choices))

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.choices is not None:
            d["choices"] = list(self.choices)
        return d


def _first_duplicate(items: Iterable):
    seen = set()
    for item in items:
        if item in seen:
            return item
        seen.add(item)
    return None


def _rank_gt(gt: Sequence[Candidate]) -> list[Candidate]:
    # Input order is kept unless every GT item carries a retrieval score.
    if gt and all(c.retrieval_score is not None for c in gt):
        return sorted(gt, key=lambda c: -c.retrieval_score)
    return list(gt)


class _Filler:
    def __init__(self, target_size: int):
        self.target_size = target_size
        self.items: list[Candidate] = []
        self._ids: set[str] = set()
        self._refs: set[str] = set()

    @property
    def full(self) -> bool:
        return len(self.items) >= self.target_size

    def add(self, c: Candidate) -> bool:
        if self.full or c.id in self._ids or c.payload_ref in self._refs:
            return False
        self.items.append(c)
        self._ids.add(c.id)
        self._refs.add(c.payload_ref)
        return True

    def seen(self, c: Candidate) -> bool:
        return c.id in self._ids or c.payload_ref in self._refs


def build_pool(
    gt: Sequence[Candidate],
    retrieved: Sequence[Candidate],
    target_size: int = 10,
    regime: str = "benchmark_default",
    seed: int = 0,
    query_id: str = "",
) -> CandidatePool:
    """Assemble a fixed, deduplicated candidate pool for one query.

    ``retrieved`` is expected in descending retrieval-score order. Up to five
    GT items (best retrieval score first) are forced in for every regime but
    ``pure_retrieve``; the remaining slots come from the retrieved list, with
    hard negatives restricted to non-GT items.
    """
    if regime not in REGIMES:
        raise PoolError(f"unknown regime {regime!r}")
    if target_size < 1:
        raise PoolError("target_size must be >= 1")
    filler = _Filler(target_size)

    if regime == "pure_retrieve":
        if not retrieved:
            raise PoolError(f"pool {query_id!r}: pure_retrieve needs retrieved candidates")
        for c in retrieved:
            filler.add(c)
        return CandidatePool(query_id, tuple(filler.items), regime, target_size)

    forced = _rank_gt(gt)[:MAX_FORCED_GT]
    if target_size < len(forced):
        raise PoolError(
            f"pool {query_id!r}: target_size {target_size} below {len(forced)} forced GT items"
        )
    for c in forced:
        filler.add(c)

    if regime == "benchmark_default":
        for c in retrieved:
            filler.add(c)
    else:
        negatives = [c for c in retrieved if not c.is_ground_truth]
        if regime == "gt_hard_neg":
            for c in negatives:
                filler.add(c)
        else:
            taken = 0
            rest = []
            for c in negatives:
                if taken < FIXED_HARD_NEGATIVES and not filler.seen(c):
                    if filler.add(c):
                        taken += 1
                    continue
                if not filler.seen(c):
                    rest.append(c)
            if not filler.full and rest:
                rng = make_rng(seed, "pool", query_id)
                order = rng.permutation(len(rest))
                for i in order:
                    filler.add(rest[int(i)])
    return CandidatePool(query_id, tuple(filler.items), regime, target_size)


def gt_oracle_select(pool: CandidatePool, k: int, global_seed: int = 0) -> list[str]:
    """First ``k`` ids of a per-query seeded shuffle of the pool's GT items.

    The shuffle does not depend on ``k``, so smaller selections are prefixes of
    larger ones.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    gt = [c.id for c in pool.candidates if c.is_ground_truth]
    if not gt:
        raise PoolError(f"pool {pool.query_id!r} has no ground-truth candidates")
    rng = make_rng(global_seed, "gt_oracle", pool.query_id)
    order = rng.permutation(len(gt))
    return [gt[int(i)] for i in order[:k]]


def save_pool_file(pools: Iterable[CandidatePool], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pool in pools:
            fh.write(json.dumps(pool.to_dict(), sort_keys=True) + "\n")


def load_pool_file(path) -> list[CandidatePool]:
    pools = []
    for lineno, record in _iter_jsonl(path):
        try:
            pools.append(CandidatePool.from_dict(record))
        except (KeyError, TypeError) as exc:
            raise PoolFileError(path, lineno, f"schema violation: {exc!r}") from None
        except PoolError as exc:
            raise PoolFileError(path, lineno, str(exc)) from None
    return pools


def save_query_file(queries: Iterable[Query], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps(q.to_dict(), sort_keys=True) + "\n")


def load_query_file(path) -> dict[str, Query]:
    queries = {}
    for lineno, record in _iter_jsonl(path):
        try:
            q = Query(**record)
        except TypeError as exc:
            raise PoolFileError(path, lineno, f"schema violation: {exc}") from None
        if q.query_id in queries:
            raise PoolFileError(path, lineno, f"duplicate query id {q.query_id!r}")
        queries[q.query_id] = q
    return queries


def _iter_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PoolFileError(path, lineno, f"invalid JSON: {exc.msg}") from None
            if not isinstance(record, dict):
                raise PoolFileError(path, lineno, "record must be a JSON object")
            if record.get("kind") == "header":
                continue
            yield lineno, record


def candidates_from_listing(path: str | Path) -> list[Candidate]:
    """Read a JSONL listing of candidates (one Candidate object per line)."""
    out = []
    for lineno, record in _iter_jsonl(path):
        try:
            out.append(Candidate(**record))
        except TypeError as exc:
            raise PoolFileError(path, lineno, f"schema violation: {exc}") from None
    return out
