"""Ranking metrics over run files and binary relevance judgments.

Cutoff metrics (P, R, F1, MRR, NDCG) are evaluated at k=5 by default; MAP is
computed over the full ranked list. Aggregates are per-query means except
Micro-F1, which pools TP/FP/FN counts across queries.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from promptcase.errors import EvaluationError

DEFAULT_CUTOFF = 5
BOUND_TOLERANCE = 1e-9

METRIC_COLUMNS = ("P@{k}", "R@{k}", "Mi-F1", "Ma-F1", "MRR@{k}", "MAP", "NDCG@{k}")


def _check(relevant: set) -> None:
    if not relevant:
        raise EvaluationError("empty relevant set")


def precision_at_k(ranked: Sequence[str], relevant: set, k: int) -> float:
    """Hits in the top k over k; missing slots count as misses."""
    _check(relevant)
    hits = sum(1 for doc in ranked[:k] if doc in relevant)
    return hits / k


def recall_at_k(ranked: Sequence[str], relevant: set, k: int) -> float:
    _check(relevant)
    hits = sum(1 for doc in ranked[:k] if doc in relevant)
    return hits / len(relevant)


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    denominator = 2 * tp + fp + fn
    return 2 * tp / denominator if denominator else 0.0


def mrr_at_k(ranked: Sequence[str], relevant: set, k: int) -> float:
    """Reciprocal rank of the first relevant hit within the top k, else 0."""
    _check(relevant)
    for i, doc in enumerate(ranked[:k], 1):
        if doc in relevant:
            return 1.0 / i
    return 0.0


def average_precision(ranked: Sequence[str], relevant: set) -> float:
    """AP over the full list; unretrieved relevant documents contribute 0."""
    _check(relevant)
    hits = 0
    total = 0.0
    for i, doc in enumerate(ranked, 1):
        if doc in relevant:
            hits += 1
            total += hits / i
    return total / len(relevant)


def ndcg_at_k(ranked: Sequence[str], relevant: set, k: int) -> float:
    """Binary-gain NDCG with 1/log2(rank+1) discounts; the ideal ranking
    fills the first min(k, |relevant|) slots."""
    _check(relevant)
    dcg = sum(1.0 / math.log2(i + 1) for i, doc in enumerate(ranked[:k], 1) if doc in relevant)
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, min(k, len(relevant)) + 1))
    return dcg / idcg


@dataclass(frozen=True)
class QueryMetrics:
    query_id: str
    p_at_k: float
    r_at_k: float
    f1: float
    rr: float
    ap: float
    ndcg: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class MetricsReport:
    """Per-query records plus the seven aggregate metrics at one cutoff.

    avg_relevant and recall_bound document the structural ceiling on R@k
    (k divided by the mean relevant count); within_bound flags whether the
    reported recall respects it. The bound is exact for uniform relevant-set
    sizes and only indicative otherwise.
    """

    k: int
    per_query: tuple[QueryMetrics, ...]
    precision: float
    recall: float
    micro_f1: float
    macro_f1: float
    mrr: float
    map_score: float
    ndcg: float
    avg_relevant: float
    recall_bound: float
    within_bound: bool

    def aggregates(self) -> dict[str, float]:
        return {
            "P": self.precision,
            "R": self.recall,
            "MiF1": self.micro_f1,
            "MaF1": self.macro_f1,
            "MRR": self.mrr,
            "MAP": self.map_score,
            "NDCG": self.ndcg,
        }

    def percent_row(self) -> list[str]:
        return [f"{value * 100:.1f}" for value in self.aggregates().values()]

    def to_json_dict(self) -> dict:
        return {
            "k": self.k,
            "aggregates": self.aggregates(),
            "avg_relevant_per_query": self.avg_relevant,
            "recall_bound": self.recall_bound,
            "within_recall_bound": self.within_bound,
            "per_query": [
                {
                    "query_id": q.query_id,
                    "p_at_k": q.p_at_k,
                    "r_at_k": q.r_at_k,
                    "f1": q.f1,
                    "rr": q.rr,
                    "ap": q.ap,
                    "ndcg": q.ndcg,
                    "tp": q.tp,
                    "fp": q.fp,
                    "fn": q.fn,
                }
                for q in self.per_query
            ],
        }


def _ranked_ids(entries) -> list[str]:
    ids = getattr(entries, "ids", None)
    if callable(ids):
        return ids()
    out = []
    for item in entries:
        out.append(item[0] if isinstance(item, (tuple, list)) else item)
    return out


def evaluate_run(
    run: Mapping[str, object],
    judgments: Mapping[str, set] | object,
    k: int = DEFAULT_CUTOFF,
) -> MetricsReport:
    """Score a run (query id -> ranking) against binary judgments.

    Rankings may be RankedLists, (id, score) pairs, or bare id lists. Every
    query in the run must be judged; the reverse is not required.
    """
    table = getattr(judgments, "judgments", judgments)
    if not run:
        raise EvaluationError("empty run")
    per_query = []
    for query_id in sorted(run):
        if query_id not in table:
            raise EvaluationError(f"no judgments for query {query_id!r}")
        relevant = set(table[query_id])
        ranked = _ranked_ids(run[query_id])
        tp = sum(1 for doc in ranked[:k] if doc in relevant)
        per_query.append(
            QueryMetrics(
                query_id=query_id,
                p_at_k=precision_at_k(ranked, relevant, k),
                r_at_k=recall_at_k(ranked, relevant, k),
                f1=f1_from_counts(tp, k - tp, len(relevant) - tp),
                rr=mrr_at_k(ranked, relevant, k),
                ap=average_precision(ranked, relevant),
                ndcg=ndcg_at_k(ranked, relevant, k),
                tp=tp,
                fp=k - tp,
                fn=len(relevant) - tp,
            )
        )
    n = len(per_query)
    pooled_tp = sum(q.tp for q in per_query)
    pooled_fp = sum(q.fp for q in per_query)
    pooled_fn = sum(q.fn for q in per_query)
    recall = sum(q.r_at_k for q in per_query) / n
    avg_relevant = sum(len(set(table[q.query_id])) for q in per_query) / n
    bound = k / avg_relevant
    return MetricsReport(
        k=k,
        per_query=tuple(per_query),
        precision=sum(q.p_at_k for q in per_query) / n,
        recall=recall,
        micro_f1=f1_from_counts(pooled_tp, pooled_fp, pooled_fn),
        macro_f1=sum(q.f1 for q in per_query) / n,
        mrr=sum(q.rr for q in per_query) / n,
        map_score=sum(q.ap for q in per_query) / n,
        ndcg=sum(q.ndcg for q in per_query) / n,
        avg_relevant=avg_relevant,
        recall_bound=bound,
        within_bound=recall <= bound + BOUND_TOLERANCE,
    )


def metric_header(k: int) -> list[str]:
    return [column.format(k=k) for column in METRIC_COLUMNS]


def format_metrics_table(rows: Sequence[tuple[str, MetricsReport]]) -> str:
    """Aligned text table, one row per run, metrics as percentages (1 dp)."""
    if not rows:
        raise EvaluationError("no rows to format")
    k = rows[0][1].k
    header = ["run"] + metric_header(k)
    body = [[label] + report.percent_row() for label, report in rows]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = []
    for row in [header] + body:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def metrics_csv(rows: Sequence[tuple[str, MetricsReport]]) -> str:
    if not rows:
        raise EvaluationError("no rows to format")
    k = rows[0][1].k
    lines = [",".join(["run"] + metric_header(k))]
    for label, report in rows:
        lines.append(",".join([label] + report.percent_row()))
    return "\n".join(lines) + "\n"


def save_report_json(report: MetricsReport, path) -> None:
    Path(path).write_text(
        json.dumps(report.to_json_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
