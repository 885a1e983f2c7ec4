import json

import pytest
import yaml

from evidence_utility import __version__
from evidence_utility.cli import main
from evidence_utility.config import RunConfig, build_config, validate

from conftest import write_jsonl


def run_cli(args, capsys):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def jsonl(path):
    return [json.loads(line) for line in open(path, encoding="utf-8")]


@pytest.fixture
def pools(cli_inputs, capsys):
    path = cli_inputs["dir"] / "pools.jsonl"
    code, _, _ = run_cli(["pool", "--input", cli_inputs["listing"], "--out", path], capsys)
    assert code == 0
    return path


class TestConfig:
    def test_precedence(self):
        cfg, problems = build_config({"seed": 3, "concurrency_limit": 2}, {"seed": 9, "out": None})
        assert problems == []
        assert cfg.seed == 9 and cfg.concurrency_limit == 2 and cfg.target_size == RunConfig().target_size

    def test_unknown_keys_reported(self):
        _, problems = build_config({"sed": 1}, {})
        assert problems == ["config file: unknown key 'sed'"]

    def test_api_key_rejected(self):
        cfg, _ = build_config({"surrogate": {"type": "openai", "base_url": "x", "model": "m", "api_key": "sk"}}, {})
        assert any("api_key" in p for p in validate(cfg, "rank"))

    def test_hash_ignores_output_paths(self):
        assert RunConfig(out="a").config_hash() == RunConfig(out="b").config_hash()
        assert RunConfig(seed=1).config_hash() != RunConfig(seed=2).config_hash()


class TestValidation:
    def test_enumerates_every_problem(self, capsys, tmp_path):
        code, out, err = run_cli(
            ["rank", "--pools", tmp_path / "no", "--queries", tmp_path / "none", "-k", "0",
             "--template-id", "visualrag_zero_shot", "--concurrency-limit", "0"],
            capsys,
        )
        assert code == 1 and out == ""
        problems = json.loads(err)["problems"]
        assert len(problems) == 5

    def test_no_side_effects(self, cli_inputs, capsys):
        out_path = cli_inputs["dir"] / "ranked.jsonl"
        code, _, _ = run_cli(
            ["rank", "--pools", cli_inputs["listing"], "--queries", cli_inputs["queries"], "--out", out_path,
             "--surrogate-type", "openai"],
            capsys,
        )
        assert code == 1
        assert not out_path.exists()

    def test_credentials_not_a_flag(self, capsys):
        code, _, err = run_cli(["rank", "--api-key", "sk-123"], capsys)
        assert code == 1 and json.loads(err)["stage"] == "arguments"

    def test_bad_config_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text(yaml.safe_dump({"surrogate": {"type": "openai", "api_key": "sk"}, "bogus": 1}))
        code, _, err = run_cli(["cost", "--config", cfg], capsys)
        problems = json.loads(err)["problems"]
        assert code == 1
        assert any("bogus" in p for p in problems) and any("api_key" in p for p in problems)

    def test_input_schema_errors(self, cli_inputs, capsys):
        bad = write_jsonl(cli_inputs["dir"] / "bad.jsonl", [{"query_id": "x", "gt": [{"idd": 1}]}])
        code, _, err = run_cli(["pool", "--input", bad], capsys)
        assert code == 1 and "schema" in err


class TestPoolCommand:
    def test_pool_output(self, pools):
        records = jsonl(pools)
        assert records[0]["kind"] == "header" and records[0]["version"] == __version__
        body = records[1:]
        assert [r["query_id"] for r in body] == ["q0", "q1", "q2"]
        assert all(len(r["candidates"]) == 10 for r in body)
        assert all(sum(c["is_ground_truth"] for c in r["candidates"]) == 2 for r in body)

    def test_partial_failure_exit(self, cli_inputs, capsys):
        rows = [{"query_id": "ok", "retrieved": [{"id": "a", "payload_ref": "https://x/a"}]},
                {"query_id": "empty", "retrieved": []}]
        listing = write_jsonl(cli_inputs["dir"] / "l.jsonl", rows)
        out_path = cli_inputs["dir"] / "p.jsonl"
        args = ["pool", "--input", listing, "--regime", "pure_retrieve", "--out", out_path]
        code, _, _ = run_cli(args, capsys)
        assert code == 3
        assert jsonl(out_path)[-1]["kind"] == "error"
        code, _, _ = run_cli(args + ["--max-failure-rate", "0.5"], capsys)
        assert code == 0


class TestRankAndRun:
    def test_rank(self, pools, cli_inputs, capsys):
        out_path = cli_inputs["dir"] / "rank.jsonl"
        code, _, _ = run_cli(
            ["rank", "--pools", pools, "--queries", cli_inputs["queries"], "-k", "1", "-k", "3", "--out", out_path],
            capsys,
        )
        assert code == 0
        records = jsonl(out_path)[1:]
        r = records[0]
        assert set(r["selections"]) == {"1", "3"}
        assert r["selections"]["3"]["ranked_ids"][:1] == r["selections"]["1"]["ranked_ids"]
        assert len(r["scores"]) == len(r["values"]) == 10

    def test_rank_uncertainty_method(self, pools, cli_inputs, capsys):
        out_path = cli_inputs["dir"] / "rank_u.jsonl"
        code, _, _ = run_cli(
            ["rank", "--pools", pools, "--queries", cli_inputs["queries"], "--method", "avg_token_prob",
             "--out", out_path],
            capsys,
        )
        assert code == 0
        assert jsonl(out_path)[1]["selections"]["1"]["score_field"] == "certainty"

    def test_run_deterministic(self, pools, cli_inputs, capsys):
        outs = []
        for name in ("a.jsonl", "b.jsonl"):
            path = cli_inputs["dir"] / name
            code, _, _ = run_cli(
                ["run", "--pools", pools, "--queries", cli_inputs["queries"], "--seed", "4",
                 "--cost-family", "qwen3-vl", "--out", path],
                capsys,
            )
            assert code == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]
        rec = json.loads(outs[0].decode().splitlines()[1])
        assert rec["generation"]["answer_text"] is not None
        assert len(rec["selection"]["ranked_ids"]) == 3
        assert rec["cost"]["decode_ratio"] == pytest.approx(101 / 3)

    def test_run_rejects_multiple_k(self, pools, cli_inputs, capsys):
        code, _, _ = run_cli(["run", "--pools", pools, "--queries", cli_inputs["queries"], "-k", "1", "-k", "2"], capsys)
        assert code == 1

    def test_missing_query_record(self, pools, cli_inputs, capsys):
        q = write_jsonl(cli_inputs["dir"] / "q.jsonl", [{"query_id": "q0", "text": "?"}])
        code, _, err = run_cli(["rank", "--pools", pools, "--queries", q], capsys)
        assert code == 1 and "q1" in err and "q2" in err


class TestEval:
    def test_empty_results(self, tmp_path, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        code, out, _ = run_cli(["eval", "--results", empty], capsys)
        assert code == 0 and "(empty report)" in out

    def test_report_formats(self, pools, cli_inputs, capsys):
        d = cli_inputs["dir"]
        run_cli(["run", "--pools", pools, "--queries", cli_inputs["queries"], "--out", d / "run.jsonl"], capsys)
        run_cli(["rank", "--pools", pools, "--queries", cli_inputs["queries"], "--out", d / "s.jsonl"], capsys)
        run_cli(["rank", "--pools", pools, "--queries", cli_inputs["queries"], "--surrogate-seed", "7",
                 "--out", d / "m.jsonl"], capsys)
        code, out, _ = run_cli(
            ["eval", "--results", d / "run.jsonl", "--surrogate-scores", d / "s.jsonl", "--main-scores", d / "m.jsonl",
             "--format", "json"],
            capsys,
        )
        assert code == 0
        doc = json.loads(out)
        assert doc["header"]["command"] == "eval"
        assert [r["group"] for r in doc["accuracy"]["rows"]] == ["c0", "c1", "ALL"]
        assert doc["agreement"]["rows"][-1]["n_candidates"] == 30
        code, out, _ = run_cli(["eval", "--results", d / "run.jsonl", "--format", "csv", "-k", "2"], capsys)
        assert "group,n,n_graded,accuracy,hit@2" in out

    def test_fp_needs_both_files(self, tmp_path, capsys):
        f = tmp_path / "s.jsonl"
        f.write_text("")
        code, _, _ = run_cli(["eval", "--surrogate-scores", f], capsys)
        assert code == 1


class TestCostAndSimulate:
    def test_cost_qwen(self, capsys):
        code, out, _ = run_cli(["cost", "--family", "qwen3-vl", "--prefill-only", "--format", "json"], capsys)
        assert code == 0
        row = json.loads(out)["cost"]["rows"][0]
        assert row["ratio"] == pytest.approx(47960 / 14270)
        assert row["decode_ratio"] == pytest.approx(33.67, abs=0.01)

    def test_cost_all_families_text(self, capsys):
        code, out, _ = run_cli(["cost"], capsys)
        assert code == 0
        for fam in ("qwen3-vl", "ovis2.5", "internvl3.5", "gemma3"):
            assert fam in out

    def test_simulate_theorems(self, capsys):
        code, out, _ = run_cli(["simulate", "--theorems", "--n-worlds", "30", "--n-draws", "500"], capsys)
        doc = json.loads(out)
        assert code == 0
        assert all(s["violations"] == 0 for s in doc["theorems"])
        assert "comparison" not in doc

    def test_simulate_compare_deterministic(self, tmp_path, capsys):
        cfg = tmp_path / "sim.json"
        cfg.write_text(json.dumps({"sim": {"n_queries": 30}}))
        paths = []
        for name in ("a", "b"):
            out_path, csv_path = tmp_path / f"{name}.json", tmp_path / f"{name}.csv"
            code, _, _ = run_cli(
                ["simulate", "--compare", "--config", cfg, "--seed", "3", "--out", out_path, "--csv", csv_path], capsys
            )
            assert code == 0
            paths.append((out_path.read_bytes(), csv_path.read_bytes()))
        assert paths[0] == paths[1]
        assert paths[0][1].decode().startswith("strategy,k,gt_hit_rate")

    def test_simulate_bad_sim_config(self, tmp_path, capsys):
        cfg = tmp_path / "sim.yaml"
        cfg.write_text("sim:\n  n_queries: 0\n  noise_cdf: cauchy\n")
        code, _, err = run_cli(["simulate", "--config", cfg], capsys)
        assert code == 1 and len(json.loads(err)["problems"]) == 2
