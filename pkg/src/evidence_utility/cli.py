"""Command-line entry point: ``evu {pool,rank,run,eval,cost,simulate}``.

Every command validates its whole configuration before touching a backend or
writing a file, and prefixes its output with a reproducibility header.
Exit codes: 0 ok, 1 validation, 2 runtime, 3 partial failure above
``max_failure_rate``.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .backends import SyntheticBackend, backend_from_config
from .config import RunConfig, build_config, header, load_config_file, resolved_ks, validate
from .evaluation import (
    EvalRecord,
    ReportTable,
    aggregate_report,
    exact_match,
    fp_report_by_category,
    keyword_judge,
    pooled_false_positive_rate,
)
from .pipeline import (
    FAMILIES,
    CostProfile,
    RankedSelection,
    estimate_cost,
    family_profiles,
    rank_candidates,
    rank_values,
    run_pipeline,
)
from .pools import PoolError, PoolFileError, _iter_jsonl, build_pool, load_pool_file, load_query_file
from .pools import Candidate
from .scorers import BatchScoringError, score_pool, score_pool_uncertainty
from .simulation import (
    generate_world,
    kl_identity_sweep,
    lemma_sweep,
    run_strategy_comparison,
    theorem1_sweep,
    theorem2_sweep,
)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3
COMMANDS = ("pool", "rank", "run", "eval", "cost", "simulate")


class CliError(Exception):
    def __init__(self, code: int, stage: str, problems: Sequence[str]):
        super().__init__("; ".join(problems))
        self.code = code
        self.stage = stage
        self.problems = list(problems)


class _Parser(argparse.ArgumentParser):
    # argparse would exit with 2, which is reserved for runtime failures here.
    def error(self, message):
        raise CliError(EXIT_VALIDATION, "arguments", [message])


def _flag(parser, *names, **kw):
    kw.setdefault("default", None)
    parser.add_argument(*names, **kw)


def _switch(parser, name, help):
    parser.add_argument(name, action="store_const", const=True, default=None, help=help)


def _backend_flags(parser, role: str) -> None:
    g = parser.add_argument_group(f"{role} backend")
    _flag(g, f"--{role}-type", choices=("synthetic", "openai"), help="backend kind")
    _flag(g, f"--{role}-base-url", help="OpenAI-compatible endpoint base URL")
    _flag(g, f"--{role}-model", help="model name sent to the endpoint")
    _flag(g, f"--{role}-api-key-env", help="environment variable holding the API key")
    _flag(g, f"--{role}-seed", type=int, help="seed of a synthetic backend")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evu", description="Utility-based evidence selection toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    _flag(common, "--config", help="JSON or YAML config file")
    _flag(common, "--seed", type=int, help="global seed (default 0)")
    _flag(common, "--out", help="output path (default stdout)")
    _flag(common, "--max-failure-rate", type=float, help="tolerated failure share before exit 3")

    p = sub.add_parser("pool", parents=[common], help="build candidate pools")
    _flag(p, "--input", help="JSONL of {query_id, gt, retrieved}")
    _flag(p, "--regime", help="pool regime")
    _flag(p, "--target-size", type=int, help="pool size (default 10)")

    for name, text in (("rank", "score pools and rank candidates"), ("run", "rank then generate")):
        p = sub.add_parser(name, parents=[common], help=text)
        _flag(p, "--pools", help="pool JSONL file")
        _flag(p, "--queries", help="query JSONL file")
        _flag(p, "--template-id", help="helpfulness probe template")
        _flag(p, "-k", "--k", type=int, action="append", help="selection size (repeatable)")
        _flag(p, "--concurrency-limit", type=int, help="in-flight probe calls (default 4)")
        _switch(p, "--feasibility-filter", "drop candidates below the pool-mean p_c")
        _backend_flags(p, "surrogate")
        if name == "rank":
            _flag(p, "--method", help="utility or an uncertainty baseline")
        else:
            _backend_flags(p, "main")
            _flag(p, "--cost-family", choices=FAMILIES, help="attach a cost estimate")
            _flag(p, "--max-tokens", type=int, help="generation budget")
            _switch(p, "--strip-image-placeholders", "drop image placeholder lines")

    p = sub.add_parser("eval", parents=[common], help="metrics over results files")
    _flag(p, "--results", help="results JSONL from `evu run`")
    _flag(p, "--surrogate-scores", help="rank JSONL scored by the surrogate")
    _flag(p, "--main-scores", help="rank JSONL scored by the main model")
    _flag(p, "-k", "--k", type=int, action="append", help="hit-rate cutoff (repeatable)")
    _flag(p, "--group-by", help="record field to group by (default category)")
    _flag(p, "--format", choices=("text", "csv", "json"))
    _flag(p, "--fp-mode", choices=("per_query", "global"))
    _flag(p, "--judge", choices=("exact", "keyword"))

    p = sub.add_parser("cost", parents=[common], help="inference cost estimates")
    _flag(p, "--family", dest="cost_family", choices=FAMILIES, help="model family (default all)")
    _flag(p, "--n", dest="n_candidates", type=int, help="candidates per query (default 10)")
    _switch(p, "--prefill-only", "ignore decode compute")
    _flag(p, "--format", choices=("text", "csv", "json"))

    p = sub.add_parser("simulate", parents=[common], help="theorem checks and strategy comparison")
    _switch(p, "--theorems", "run the theorem and lemma sweeps")
    _switch(p, "--compare", "run the ranking-strategy comparison")
    _flag(p, "-k", "--k", type=int, action="append", help="cutoff for the comparison (repeatable)")
    _flag(p, "--n-worlds", type=int, help="random worlds for the Theorem 1 and lemma sweeps")
    _flag(p, "--n-draws", type=int, help="random draws for the Theorem 2 sweep")
    _flag(p, "--strategies", nargs="+", help="strategies to compare")
    _flag(p, "--csv", help="also write the comparison as CSV")
    return parser


_NON_CONFIG = {"command", "config"}


def _flag_values(args: argparse.Namespace, file_values: dict) -> dict:
    values = {}
    backends = {}
    for key, value in vars(args).items():
        if key in _NON_CONFIG or value is None:
            continue
        role, _, rest = key.partition("_")
        if role in ("surrogate", "main") and rest in ("type", "base_url", "model", "api_key_env", "seed"):
            backends.setdefault(role, {})[rest] = value
            continue
        values[key] = value
    for role, overrides in backends.items():
        default = getattr(RunConfig(), role)
        base = dict(file_values.get(role) or default)
        if overrides.get("type", base.get("type")) != base.get("type"):
            base = {"id": role}
        base.update(overrides)
        values[role] = base
    return values


def resolve_config(args: argparse.Namespace) -> RunConfig:
    problems = []
    file_values: dict = {}
    if args.config is not None:
        try:
            file_values = load_config_file(args.config)
        except (OSError, ValueError) as exc:
            problems.append(f"config: {exc}")
    cfg, unknown = build_config(file_values, _flag_values(args, file_values))
    problems += unknown
    try:
        problems += validate(cfg, args.command)
    except (TypeError, AttributeError) as exc:
        problems.append(f"config: malformed value ({exc})")
    if problems:
        raise CliError(EXIT_VALIDATION, "validation", problems)
    return cfg


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _emit(cfg: RunConfig, text: str) -> None:
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        Path(cfg.out).write_text(text, encoding="utf-8")


def _emit_jsonl(cfg: RunConfig, command: str, records: list[dict]) -> None:
    lines = [_dumps(header(cfg, command))] + [_dumps(r) for r in records]
    _emit(cfg, "\n".join(lines) + "\n")


def _status(failures: int, total: int, cfg: RunConfig) -> int:
    if total and failures / total > cfg.max_failure_rate:
        sys.stderr.write(
            _dumps({"kind": "error", "stage": "partial", "failures": failures, "total": total}) + "\n"
        )
        return EXIT_PARTIAL
    return EXIT_OK


def _load_inputs(cfg: RunConfig):
    """Pools and queries, with every input problem reported at once."""
    problems = []
    pools = queries = None
    try:
        pools = load_pool_file(cfg.pools)
    except PoolFileError as exc:
        problems.append(str(exc))
    try:
        queries = load_query_file(cfg.queries)
    except PoolFileError as exc:
        problems.append(str(exc))
    if pools is not None and queries is not None:
        problems += [f"pool {p.query_id!r} has no query record" for p in pools if p.query_id not in queries]
    if problems:
        raise CliError(EXIT_VALIDATION, "input", problems)
    return pools, queries


# ---------------------------------------------------------------- commands


def cmd_pool(cfg: RunConfig) -> int:
    records, errors, problems = [], [], []
    try:
        rows = list(_iter_jsonl(cfg.input))
    except PoolFileError as exc:
        raise CliError(EXIT_VALIDATION, "input", [str(exc)]) from None
    parsed = []
    for lineno, row in rows:
        try:
            gt = [Candidate(**{**c, "is_ground_truth": True}) for c in row.get("gt", [])]
            retrieved = [Candidate(**c) for c in row.get("retrieved", [])]
            parsed.append((str(row["query_id"]), gt, retrieved))
        except (KeyError, TypeError, PoolError) as exc:
            problems.append(f"{cfg.input}:{lineno}: schema violation: {exc}")
    if problems:
        raise CliError(EXIT_VALIDATION, "input", problems)
    for qid, gt, retrieved in parsed:
        try:
            pool = build_pool(gt, retrieved, cfg.target_size, cfg.regime, cfg.seed, qid)
        except PoolError as exc:
            errors.append({"kind": "error", "query_id": qid, "error": str(exc)})
            continue
        records.append(pool.to_dict())
    _emit_jsonl(cfg, "pool", records + errors)
    return _status(len(errors), len(parsed), cfg)


def _score_values(scores) -> tuple[dict, str]:
    field_name = "p_c" if any(s.approximate for s in scores) else "raw_logit"
    return {s.candidate_id: getattr(s, field_name) for s in scores}, field_name


def cmd_rank(cfg: RunConfig) -> int:
    pools, queries = _load_inputs(cfg)
    backend = backend_from_config(cfg.surrogate)
    ks = resolved_ks(cfg, "rank")
    records = []
    failed = total = 0
    for pool in pools:
        query = queries[pool.query_id]
        total += len(pool)
        record = {"kind": "rank", "query_id": pool.query_id, "category": query.category, "method": cfg.method}
        try:
            if cfg.method == "utility":
                scored = score_pool(backend, query, pool, cfg.template_id, cfg.concurrency_limit)
            else:
                scored = score_pool_uncertainty(backend, query, pool, cfg.method, cfg.concurrency_limit)
        except BatchScoringError as exc:
            failed += len(pool)
            records.append({**record, "errors": exc.errors, "selections": {}, "scores": [], "values": {}})
            continue
        failed += len(scored.errors)
        if cfg.method == "utility":
            values, _ = _score_values(scored.scores)
            selections = {
                str(k): rank_candidates(scored.scores, k, pool.query_id, cfg.feasibility_filter).to_dict()
                for k in ks
            }
            score_dicts = [s.to_dict() for s in scored.scores]
        else:
            values = {s.candidate_id: s.certainty for s in scored.scores}
            selections = {}
            for k in ks:
                ids, vals = rank_values(values, k)
                selections[str(k)] = RankedSelection(pool.query_id, ids, vals, k, "certainty").to_dict()
            score_dicts = [
                {"candidate_id": s.candidate_id, "method": s.method, "value": s.value, "certainty": s.certainty}
                for s in scored.scores
            ]
        records.append(
            {**record, "errors": scored.errors, "selections": selections, "scores": score_dicts, "values": values}
        )
    _emit_jsonl(cfg, "rank", records)
    return _status(failed, total, cfg)


def _cost_profiles(cfg: RunConfig):
    if cfg.surrogate_profile is not None:
        return CostProfile(**cfg.surrogate_profile), CostProfile(**cfg.main_profile), None
    if cfg.cost_family is not None:
        prof = family_profiles(cfg.cost_family)
        return prof["surrogate"], prof["main"], prof["uq_surrogate"]
    return None


def cmd_run(cfg: RunConfig) -> int:
    pools, queries = _load_inputs(cfg)
    surrogate = backend_from_config(cfg.surrogate)
    main = backend_from_config(cfg.main)
    if isinstance(main, SyntheticBackend) and not main.answers:
        # Offline runs: the synthetic main model answers correctly in proportion to evidence quality.
        main.answers = {q.query_id: q.gold_answer for q in queries.values() if q.gold_answer}
    (k,) = resolved_ks(cfg, "run")
    profiles = _cost_profiles(cfg)
    records = []
    failed = 0
    for pool in pools:
        query = queries[pool.query_id]
        outcome = run_pipeline(
            query,
            pool,
            surrogate,
            main,
            k,
            cfg.template_id,
            cfg.concurrency_limit,
            cfg.feasibility_filter,
            cfg.strip_image_placeholders,
            cfg.max_tokens,
        )
        failed += not outcome.generation.ok
        cost = None
        if profiles is not None:
            s, m, uq = profiles
            cost = estimate_cost(len(pool), s, m, uq_profile=uq).to_dict()
        records.append(
            {
                "kind": "result",
                "query_id": pool.query_id,
                "category": query.category,
                "gold_answer": query.gold_answer,
                "gt_ids": sorted(pool.gt_ids),
                "pool_ids": pool.ids,
                "generation": outcome.generation.to_dict(),
                "selection": outcome.selection.to_dict() if outcome.selection else None,
                "scores": [sc.to_dict() for sc in outcome.scores],
                "cost": cost,
            }
        )
    _emit_jsonl(cfg, "run", records)
    return _status(failed, len(pools), cfg)


def _load_records(path) -> list[dict]:
    try:
        return [r for _, r in _iter_jsonl(path)]
    except PoolFileError as exc:
        raise CliError(EXIT_VALIDATION, "input", [str(exc)]) from None


def _eval_records(cfg: RunConfig) -> list[EvalRecord]:
    out, problems = [], []
    for i, r in enumerate(_load_records(cfg.results), 1):
        if r.get("kind") != "result":
            continue
        try:
            sel = r.get("selection")
            selection = (
                RankedSelection.from_dict(sel) if sel else RankedSelection(r["query_id"], (), (), 1)
            )
            gen = r.get("generation") or {}
            out.append(
                EvalRecord(
                    r["query_id"],
                    gen.get("answer_text") or "",
                    r.get("gold_answer"),
                    selection,
                    set(r.get("gt_ids", [])),
                    r.get("category"),
                    set(r["pool_ids"]) if r.get("pool_ids") is not None else None,
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"{cfg.results}: result {i}: {exc}")
    if problems:
        raise CliError(EXIT_VALIDATION, "input", problems)
    return out


def _judge(name: str):
    if name == "keyword":
        return keyword_judge
    return lambda pred, gold: float(exact_match(pred, gold))


def _render(tables: dict[str, ReportTable], cfg: RunConfig, command: str) -> str:
    head = header(cfg, command)
    if cfg.format == "json":
        doc = {"header": head}
        for name, table in tables.items():
            doc[name] = json.loads(table.to_json())
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"
    parts = [f"# {_dumps(head)}\n"]
    for name, table in tables.items():
        if cfg.format == "csv":
            parts.append(f"# {name}\n{table.to_csv()}")
        else:
            parts.append(f"\n[{name}]\n{table.to_text()}")
    return "".join(parts)


def cmd_eval(cfg: RunConfig) -> int:
    tables = {}
    ks = resolved_ks(cfg, "eval")
    if cfg.results is not None:
        records = _eval_records(cfg)
        group_by = cfg.group_by if cfg.group_by not in ("", "none") else None
        if group_by is not None and group_by not in EvalRecord.__dataclass_fields__:
            raise CliError(EXIT_VALIDATION, "validation", [f"cannot group by {group_by!r}"])
        tables["accuracy"] = aggregate_report(records, group_by, ks, _judge(cfg.judge))
    if cfg.surrogate_scores is not None:
        s_recs = {r["query_id"]: r for r in _load_records(cfg.surrogate_scores) if r.get("kind") == "rank"}
        m_recs = {r["query_id"]: r for r in _load_records(cfg.main_scores) if r.get("kind") == "rank"}
        per_query, categories = {}, {}
        for qid in sorted(set(s_recs) & set(m_recs)):
            s_vals, m_vals = s_recs[qid]["values"], m_recs[qid]["values"]
            shared = sorted(set(s_vals) & set(m_vals))
            if len(shared) < 4:
                continue
            per_query[qid] = ({c: s_vals[c] for c in shared}, {c: m_vals[c] for c in shared})
            categories[qid] = s_recs[qid].get("category")
        if cfg.fp_mode == "global" and per_query:
            rep = pooled_false_positive_rate(per_query, mode="global")
            tables["agreement"] = ReportTable(
                ["group", "n_candidates", "false_positives", "fp_rate", "kendall_tau"],
                [{"group": "ALL", **rep.to_dict()}],
            )
        else:
            tables["agreement"] = fp_report_by_category(per_query, categories)
    _emit(cfg, _render(tables, cfg, "eval"))
    return EXIT_OK


def cmd_cost(cfg: RunConfig) -> int:
    include_decode = not cfg.prefill_only
    rows = []
    if cfg.surrogate_profile is not None:
        setups = [("custom", CostProfile(**cfg.surrogate_profile), CostProfile(**cfg.main_profile), None)]
    else:
        fams = [cfg.cost_family] if cfg.cost_family else list(FAMILIES)
        setups = []
        for fam in fams:
            prof = family_profiles(fam)
            setups.append((fam, prof["surrogate"], prof["main"], prof["uq_surrogate"]))
    for name, s, m, uq in setups:
        est = estimate_cost(cfg.n_candidates, s, m, uq_profile=uq, include_decode=include_decode)
        rows.append(
            {"family": name, "surrogate": s.model_id, "main": m.model_id, "n": cfg.n_candidates, **est.to_dict()}
        )
    columns = [
        "family",
        "surrogate",
        "main",
        "n",
        "ours_gflops",
        "standard_rerank_gflops",
        "ratio",
        "decode_ratio",
        "ours_latency_ms",
        "standard_rerank_latency_ms",
    ]
    _emit(cfg, _render({"cost": ReportTable(columns, rows)}, cfg, "cost"))
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    do_theorems = cfg.theorems or not cfg.compare
    do_compare = cfg.compare or not cfg.theorems
    doc: dict = {"header": header(cfg, "simulate")}
    violations = 0
    if do_theorems:
        sweeps = [theorem2_sweep(cfg.n_draws, cfg.seed), theorem1_sweep(cfg.n_worlds, cfg.seed)]
        sweeps += list(lemma_sweep(cfg.n_worlds, cfg.seed).values())
        sweeps.append(kl_identity_sweep(cfg.n_worlds, cfg.seed))
        doc["theorems"] = [s.to_dict() for s in sweeps]
        violations = sum(s.violations for s in sweeps)
    if do_compare:
        ks = resolved_ks(cfg, "simulate")
        world = generate_world(cfg.sim_config(), cfg.seed)
        outcomes = run_strategy_comparison(world, cfg.strategies, ks, cfg.seed)
        doc["comparison"] = [o.to_dict() for o in outcomes]
        if cfg.csv is not None:
            rows = []
            for o in outcomes:
                for k, hit, acc in zip(o.k_values, o.gt_hit_rate_by_k, o.answer_accuracy_by_k):
                    rows.append(
                        {"strategy": o.strategy_name, "k": k, "gt_hit_rate": hit, "answer_accuracy": acc,
                         "mean_top1_ig_y": o.mean_top1_ig_y}
                    )
            table = ReportTable(["strategy", "k", "gt_hit_rate", "answer_accuracy", "mean_top1_ig_y"], rows)
            Path(cfg.csv).write_text(table.to_csv(), encoding="utf-8")
    _emit(cfg, json.dumps(doc, sort_keys=True, indent=2) + "\n")
    if violations:
        sys.stderr.write(_dumps({"kind": "error", "stage": "theorems", "violations": violations}) + "\n")
        return EXIT_RUNTIME
    return EXIT_OK


HANDLERS = {
    "pool": cmd_pool,
    "rank": cmd_rank,
    "run": cmd_run,
    "eval": cmd_eval,
    "cost": cmd_cost,
    "simulate": cmd_simulate,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = make_parser().parse_args(argv)
        cfg = resolve_config(args)
        return HANDLERS[args.command](cfg)
    except CliError as exc:
        sys.stderr.write(
            _dumps({"kind": "error", "stage": exc.stage, "exit_code": exc.code, "problems": exc.problems}) + "\n"
        )
        return exc.code
    except Exception as exc:  # noqa: BLE001 - last-resort machine-readable summary
        sys.stderr.write(
            _dumps({"kind": "error", "stage": "runtime", "exit_code": EXIT_RUNTIME, "problems": [repr(exc)]})
            + "\n"
        )
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
