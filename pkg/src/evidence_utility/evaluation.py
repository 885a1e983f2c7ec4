"""Answer accuracy, GT hit rate, surrogate-main agreement and report tables."""
from __future__ import annotations

import ast
import csv
import io
import json
import math
import re
import string
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .pipeline import RankedSelection

REPORT_SCHEMA_VERSION = "1.0"

_STRIP = string.whitespace + string.punctuation
_OPTION = re.compile(r"^\s*(?:answer\s*[:：]?\s*)?[\(\[]?([A-Za-z])(?:[\)\]\.:,]|\s|$)", re.IGNORECASE)


def normalize_text(s: str) -> str:
    return s.strip(_STRIP).casefold()


def _option_letter(s: str) -> str | None:
    m = _OPTION.match(s)
    return m.group(1).upper() if m else None


def exact_match(predicted: str, gold: str) -> int:
    """1 if the answers agree after normalization, else 0.

    A single-letter gold answer is treated as a multiple-choice option and
    compared with the leading option letter of the prediction.
    """
    if not predicted or not predicted.strip() or not gold or not gold.strip():
        raise ValueError("exact_match needs non-empty predicted and gold answers")
    g = normalize_text(gold)
    if len(g) == 1 and g.isalpha():
        return int(_option_letter(predicted) == g.upper())
    p = normalize_text(predicted)
    if p.startswith("answer:"):
        p = normalize_text(p[len("answer:"):])
    return int(p == g)


def keyword_judge(predicted: str, gold: str) -> float:
    """Fraction of gold phrases contained in the prediction.

    A gold answer written as a Python list counts as correct when any item is
    contained; otherwise it is split on commas, semicolons and " and ".
    """
    pred = predicted.casefold()
    gold = gold.strip()
    if gold.startswith("[") and gold.endswith("]"):
        try:
            items = [str(x) for x in ast.literal_eval(gold)]
        except (ValueError, SyntaxError):
            items = None
        if items:
            return float(any(normalize_text(x) in pred for x in items))
    phrases = [normalize_text(x) for x in re.split(r",|;|\band\b", gold)]
    phrases = [x for x in phrases if x]
    if not phrases:
        return 0.0
    return sum(x in pred for x in phrases) / len(phrases)


@dataclass
class EvalRecord:
    query_id: str
    predicted_answer: str
    gold_answer: str | None
    selection: RankedSelection
    gt_ids: set = field(default_factory=set)
    category: str | None = None
    pool_ids: set | None = None

    def __post_init__(self):
        self.gt_ids = set(self.gt_ids)
        if self.pool_ids is not None and not self.gt_ids <= set(self.pool_ids):
            raise ValueError(f"record {self.query_id!r}: GT ids outside the candidate pool")


def record_hit_fraction(record: EvalRecord, k: int) -> float:
    top = record.selection.ranked_ids[:k]
    if not top:
        return 0.0
    return len(set(top) & record.gt_ids) / min(k, len(record.selection.ranked_ids))


def gt_hit_rate(records: Sequence[EvalRecord], k: int) -> float:
    """Mean share of the top-k selection that is ground truth, in percent."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not records:
        raise ValueError("gt_hit_rate needs at least one record")
    return 100.0 * math.fsum(record_hit_fraction(r, k) for r in records) / len(records)


@dataclass(frozen=True)
class AgreementReport:
    n_candidates: int
    false_positives: int
    fp_rate: float
    kendall_tau: float

    def to_dict(self) -> dict:
        return {
            "n_candidates": self.n_candidates,
            "false_positives": self.false_positives,
            "fp_rate": self.fp_rate,
            "kendall_tau": self.kendall_tau,
        }


def kendall_tau(x: Sequence[float], y: Sequence[float]) -> float:
    """Kendall tau-b over paired observations (O(n^2))."""
    n = len(x)
    if n != len(y):
        raise ValueError("x and y differ in length")
    if n < 2:
        return float("nan")
    concordant = discordant = tie_x = tie_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0 and dy == 0:
                continue
            if dx == 0:
                tie_x += 1
            elif dy == 0:
                tie_y += 1
            elif (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    denom = math.sqrt((concordant + discordant + tie_x) * (concordant + discordant + tie_y))
    if denom == 0:
        return float("nan")
    return (concordant - discordant) / denom


def _ranked(scores: Mapping, ids) -> list:
    return sorted(ids, key=lambda c: (-scores[c], c))


def _tail_size(n: int, quantile: float) -> int:
    if not 0.0 < quantile <= 0.5:
        raise ValueError("quantile must lie in (0, 0.5]")
    return math.ceil(quantile * n)


def false_positive_rate(
    surrogate_scores: Mapping[str, float],
    main_scores: Mapping[str, float],
    quantile: float = 0.25,
) -> AgreementReport:
    """Candidates in the surrogate's top quantile but the main model's bottom quantile.

    Both tails hold ceil(quantile * n) candidates under a descending-score
    ranking with ties broken by ascending id.
    """
    if set(surrogate_scores) != set(main_scores):
        raise ValueError("surrogate and main score maps cover different candidates")
    ids = sorted(surrogate_scores)
    n = len(ids)
    if n < 4:
        raise ValueError("need at least 4 candidates for quartile analysis")
    m = _tail_size(n, quantile)
    top_s = set(_ranked(surrogate_scores, ids)[:m])
    bottom_m = set(_ranked(main_scores, ids)[n - m:])
    fp = len(top_s & bottom_m)
    tau = kendall_tau([surrogate_scores[c] for c in ids], [main_scores[c] for c in ids])
    return AgreementReport(n, fp, 100.0 * fp / n, tau)


def pooled_false_positive_rate(
    per_query: Mapping[str, tuple[Mapping[str, float], Mapping[str, float]]],
    quantile: float = 0.25,
    mode: str = "per_query",
) -> AgreementReport:
    """FP analysis across queries.

    ``per_query`` quartiles are taken within each query and the counts summed;
    ``global`` pools every (query, candidate) pair before taking quartiles.
    Kendall tau is computed over the pooled score pairs in both modes.
    """
    if mode not in ("per_query", "global"):
        raise ValueError(f"unknown mode {mode!r}")
    s_all: dict = {}
    m_all: dict = {}
    for qid, (s, m) in per_query.items():
        if set(s) != set(m):
            raise ValueError(f"query {qid!r}: score maps cover different candidates")
        for cid in s:
            s_all[(qid, cid)] = s[cid]
            m_all[(qid, cid)] = m[cid]
    if mode == "global":
        return false_positive_rate(s_all, m_all, quantile)
    n = fp = 0
    for s, m in per_query.values():
        rep = false_positive_rate(s, m, quantile)
        n += rep.n_candidates
        fp += rep.false_positives
    keys = sorted(s_all)
    tau = kendall_tau([s_all[k] for k in keys], [m_all[k] for k in keys])
    return AgreementReport(n, fp, 100.0 * fp / n if n else 0.0, tau)


@dataclass
class ReportTable:
    columns: list[str]
    rows: list[dict]

    def to_text(self) -> str:
        if not self.rows:
            return "(empty report)\n"
        cells = [[_fmt(r.get(c)) for c in self.columns] for r in self.rows]
        widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(self.columns)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(self.columns, widths))]
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            writer.writerow({c: _fmt(r.get(c)) for c in self.columns})
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {"schema_version": REPORT_SCHEMA_VERSION, "columns": self.columns, "rows": self.rows},
            sort_keys=True,
        )


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _accuracy(records: Sequence[EvalRecord], judge: Callable[[str, str], float] | None):
    graded = [r for r in records if r.gold_answer and r.predicted_answer and r.predicted_answer.strip()]
    scored = [r for r in records if r.gold_answer]
    if not scored:
        return 0, None
    total = 0.0
    for r in graded:
        total += judge(r.predicted_answer, r.gold_answer) if judge else exact_match(r.predicted_answer, r.gold_answer)
    return len(scored), total / len(scored)


def aggregate_report(
    records: Iterable[EvalRecord],
    group_by: str | None = "category",
    ks: Sequence[int] = (1, 3, 5),
    judge: Callable[[str, str], float] | None = None,
) -> ReportTable:
    """Per-group counts, accuracy and GT hit rates, followed by an ``ALL`` row.

    Groups appear in sorted order; records without a category fall into
    ``"(none)"``. Accuracy is over records that carry a gold answer; an empty
    prediction counts as wrong.
    """
    records = list(records)
    columns = ["group", "n", "n_graded", "accuracy"] + [f"hit@{k}" for k in ks]
    if not records:
        return ReportTable(columns, [])
    groups: dict[str, list[EvalRecord]] = {}
    if group_by:
        for r in records:
            key = getattr(r, group_by) or "(none)"
            groups.setdefault(str(key), []).append(r)
    rows = []
    for name in sorted(groups):
        rows.append(_row(name, groups[name], ks, judge))
    rows.append(_row("ALL", records, ks, judge))
    return ReportTable(columns, rows)


def _row(name, records, ks, judge) -> dict:
    n_graded, acc = _accuracy(records, judge)
    row = {"group": name, "n": len(records), "n_graded": n_graded, "accuracy": acc}
    for k in ks:
        row[f"hit@{k}"] = gt_hit_rate(records, k)
    return row


def fp_report_by_category(
    per_query: Mapping[str, tuple[Mapping[str, float], Mapping[str, float]]],
    categories: Mapping[str, str | None],
    quantile: float = 0.25,
) -> ReportTable:
    """Per-category false-positive counts with per-query quartiles."""
    groups: dict[str, dict] = {}
    for qid, pair in per_query.items():
        groups.setdefault(categories.get(qid) or "(none)", {})[qid] = pair
    rows = []
    for name in sorted(groups):
        rep = pooled_false_positive_rate(groups[name], quantile)
        rows.append({"group": name, **rep.to_dict()})
    if per_query:
        rows.append({"group": "ALL", **pooled_false_positive_rate(per_query, quantile).to_dict()})
    return ReportTable(["group", "n_candidates", "false_positives", "fp_rate", "kendall_tau"], rows)
