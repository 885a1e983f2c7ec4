import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from evidence_utility.pools import (
    Candidate,
    CandidatePool,
    PoolError,
    PoolFileError,
    Query,
    build_pool,
    gt_oracle_select,
    load_pool_file,
    load_query_file,
    save_pool_file,
    save_query_file,
)
from evidence_utility.seeding import derive_seed, make_rng, unit_hash


def cands(prefix, n, gt=False, score0=1.0):
    return [
        Candidate(f"{prefix}{i}", f"https://img.example/{prefix}{i}.jpg", gt, score0 - i / 100)
        for i in range(n)
    ]


class TestSeeding:
    def test_stable_and_distinct(self):
        assert derive_seed(0, "a", 1) == derive_seed(0, "a", 1)
        assert derive_seed(0, "a", 1) != derive_seed(1, "a", 1)
        assert derive_seed(0, "a", 1) != derive_seed(0, "a1")
        assert make_rng(3, "x").uniform() == make_rng(3, "x").uniform()
        assert 0.0 <= unit_hash(0, "q") < 1.0


class TestBuildPool:
    def test_default_forces_best_gt(self):
        gt = cands("g", 7, gt=True)
        pool = build_pool(gt, cands("r", 20), query_id="q")
        assert len(pool) == 10
        assert pool.ids[:5] == ["g0", "g1", "g2", "g3", "g4"]
        assert not pool.under_filled

    def test_gt_ranked_by_score(self):
        gt = [Candidate("lo", "https://x/lo", True, 0.1), Candidate("hi", "https://x/hi", True, 0.9)]
        pool = build_pool(gt, cands("r", 5))
        assert pool.ids[:2] == ["hi", "lo"]

    def test_gt_without_scores_keeps_input_order(self):
        gt = [Candidate("b", "https://x/b", True), Candidate("a", "https://x/a", True)]
        assert build_pool(gt, cands("r", 3)).ids[:2] == ["b", "a"]

    def test_dedup_by_id_and_ref(self):
        gt = cands("g", 2, gt=True)
        retrieved = [gt[0], Candidate("dup", gt[1].payload_ref), *cands("r", 3)]
        pool = build_pool(gt, retrieved)
        assert pool.ids == ["g0", "g1", "r0", "r1", "r2"]
        assert pool.under_filled

    def test_pure_retrieve_ignores_gt(self):
        pool = build_pool(cands("g", 3, gt=True), cands("r", 12), regime="pure_retrieve")
        assert pool.ids == [f"r{i}" for i in range(10)]
        with pytest.raises(PoolError):
            build_pool(cands("g", 3, gt=True), [], regime="pure_retrieve")

    def test_hard_negatives_skip_gt(self):
        retrieved = [Candidate("rg", "https://x/rg", True)] + cands("r", 10)
        pool = build_pool(cands("g", 2, gt=True), retrieved, regime="gt_hard_neg")
        assert "rg" not in pool.ids
        assert pool.ids[2:] == [f"r{i}" for i in range(8)]

    def test_stochastic_regime(self):
        gt = cands("g", 5, gt=True)
        retrieved = cands("r", 30)
        a = build_pool(gt, retrieved, regime="gt_hard_neg_stochastic", seed=1, query_id="q")
        b = build_pool(gt, retrieved, regime="gt_hard_neg_stochastic", seed=1, query_id="q")
        c = build_pool(gt, retrieved, target_size=15, regime="gt_hard_neg_stochastic", seed=2, query_id="q")
        assert a == b
        assert a.ids[5:10] == ["r0", "r1", "r2", "r3", "r4"]
        assert len(c) == 15 and c.ids[:10] == a.ids
        d = build_pool(gt, retrieved, target_size=15, regime="gt_hard_neg_stochastic", seed=3, query_id="q")
        assert c.ids[10:] != d.ids[10:]

    def test_target_below_forced_gt(self):
        with pytest.raises(PoolError):
            build_pool(cands("g", 5, gt=True), [], target_size=3)

    def test_unknown_regime(self):
        with pytest.raises(PoolError):
            build_pool([], cands("r", 2), regime="bogus")

    @given(st.integers(0, 8), st.integers(0, 25), st.integers(1, 15))
    def test_size_and_uniqueness(self, n_gt, n_ret, target):
        gt = cands("g", n_gt, gt=True)
        try:
            pool = build_pool(gt, cands("r", n_ret), target_size=target)
        except PoolError:
            assert target < min(n_gt, 5)
            return
        assert len(pool) == min(target, min(n_gt, 5) + n_ret)
        assert len(set(pool.ids)) == len(pool)
        assert pool.gt_ids >= {c.id for c in gt[: min(5, n_gt)]}


class TestPoolValidation:
    def test_duplicate_id_names_pool(self):
        with pytest.raises(PoolError, match="q7"):
            CandidatePool("q7", (Candidate("a", "https://x/1"), Candidate("a", "https://x/2")))

    def test_too_many(self):
        with pytest.raises(PoolError):
            CandidatePool("q", tuple(cands("r", 4)), target_size=3)


class TestGtOracle:
    def test_prefix_property(self):
        pool = build_pool(cands("g", 5, gt=True), cands("r", 5), query_id="q")
        picks = [gt_oracle_select(pool, k, 11) for k in range(1, 6)]
        for small, large in zip(picks, picks[1:]):
            assert large[: len(small)] == small
        assert set(picks[-1]) == pool.gt_ids

    def test_no_gt(self):
        with pytest.raises(PoolError):
            gt_oracle_select(build_pool([], cands("r", 3)), 1)


class TestFiles:
    def test_round_trip(self, tmp_path):
        pool = build_pool(cands("g", 2, gt=True), cands("r", 4), query_id="q1")
        save_pool_file([pool], tmp_path / "p.jsonl")
        assert load_pool_file(tmp_path / "p.jsonl") == [pool]
        q = Query("q1", "what?", choices=("x", "y"), category="c")
        save_query_file([q], tmp_path / "q.jsonl")
        assert load_query_file(tmp_path / "q.jsonl") == {"q1": q}

    def test_header_lines_skipped(self, tmp_path):
        pool = build_pool(cands("g", 1, gt=True), cands("r", 1), query_id="q1")
        path = tmp_path / "p.jsonl"
        path.write_text(json.dumps({"kind": "header"}) + "\n" + json.dumps(pool.to_dict()) + "\n")
        assert load_pool_file(path) == [pool]

    def test_errors_carry_line_numbers(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"query_id": "a", "candidates": []}\n\n{not json}\n')
        with pytest.raises(PoolFileError, match=":3"):
            load_pool_file(path)
        path.write_text('{"candidates": []}\n')
        with pytest.raises(PoolFileError, match="schema"):
            load_pool_file(path)
