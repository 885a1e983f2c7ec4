import json
from pathlib import Path

import pytest

from evidence_utility.payloads import text_data_uri
from evidence_utility.pools import Candidate, CandidatePool, Query

GOLDEN = Path(__file__).parent / "golden"

# 1x1 transparent PNG
PNG_BYTES = bytes.fromhex(
    "89504e470d0a1a0a0000000d4948445200000001000000010806000000"
    "1f15c4890000000d49444154789c6360000002000001e221bc330000000049454e44ae426082"
)


def pytest_addoption(parser):
    parser.addoption("--live", action="store_true", default=False, help="run live-backend smoke tests")


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.acceptance_lines
    if not lines:
        return
    if not any(n == 11 for n, _ in lines):
        lines = lines + [(11, "SKIP criterion 11: live backend smoke test (rerun with --live and EVU_LIVE_BASE_URL)")]
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)


@pytest.fixture
def accept(request):
    """accept(n, ok, detail) records a PASS/FAIL line for criterion n, then asserts ok."""

    def record(n, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
        request.config.acceptance_lines.append((n, line))
        print(line)
        assert ok, line

    return record


def pytest_collection_modifyitems(config, items):
    if config.getoption("--live"):
        return
    skip = pytest.mark.skip(reason="live backend tests need --live")
    for item in items:
        if "live" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def image_file(tmp_path):
    path = tmp_path / "query.png"
    path.write_bytes(PNG_BYTES)
    return path


def text_pool(query_id="q1", n=10, n_gt=3, target_size=10):
    cands = [
        Candidate(f"c{i:02d}", text_data_uri(f"evidence {query_id} {i}"), is_ground_truth=i < n_gt)
        for i in range(n)
    ]
    return CandidatePool(query_id, tuple(cands), "benchmark_default", target_size)


def text_query(query_id="q1", gold="red", category="birds"):
    return Query(
        query_id,
        "What color is the beak of the northern cardinal?",
        gold_answer=gold,
        category=category,
        benchmark="visualrag",
    )


@pytest.fixture
def pool():
    return text_pool()


@pytest.fixture
def query():
    return text_query()


def write_jsonl(path, records):
    Path(path).write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


@pytest.fixture
def cli_inputs(tmp_path):
    """Pool listing and query file for three text-only queries."""
    rows, queries = [], []
    for q in range(3):
        qid = f"q{q}"
        gt = [
            {"id": f"{qid}-gt{i}", "payload_ref": text_data_uri(f"gt {qid} {i}"), "retrieval_score": 0.9 - i / 10}
            for i in range(2)
        ]
        retrieved = [
            {"id": f"{qid}-r{i}", "payload_ref": text_data_uri(f"neg {qid} {i}"), "retrieval_score": 0.8 - i / 20}
            for i in range(12)
        ]
        rows.append({"query_id": qid, "gt": gt, "retrieved": retrieved})
        queries.append(
            {"query_id": qid, "text": f"What bird is number {q}?", "gold_answer": "sparrow", "category": f"c{q % 2}"}
        )
    listing = write_jsonl(tmp_path / "listing.jsonl", rows)
    qfile = write_jsonl(tmp_path / "queries.jsonl", queries)
    return {"dir": tmp_path, "listing": listing, "queries": qfile}
