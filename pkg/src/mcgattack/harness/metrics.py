"""Aggregate attack metrics: ASR, mean/median queries, FASR and ASR@q curves."""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass, field
from typing import Iterable, Optional

from ..errors import EmptyResults


@dataclass
class MetricsReport:
    asr: float  # percent
    mean_queries: Optional[float]
    median_queries: Optional[float]
    fasr: float  # percent
    n_examples: int
    rows: list = field(default_factory=list)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("rows")
        return d


def _fields(r):
    if isinstance(r, dict):
        return bool(r["success"]), int(r["queries_used"]), bool(r["first_query_success"])
    return bool(r.success), int(r.queries_used), bool(r.first_query_success)


def compute_metrics(results: Iterable, rows: Optional[list] = None) -> MetricsReport:
    """Metrics over attack results (objects or JSONL-style dicts).

    Mean and median are taken over successful attacks only and are ``None``
    when nothing succeeded.
    """
    triples = [_fields(r) for r in results]
    if not triples:
        raise EmptyResults("no attack results to summarise")
    n = len(triples)
    succ = [q for ok, q, _ in triples if ok]
    first = sum(1 for ok, _, f in triples if f)
    return MetricsReport(
        asr=100.0 * len(succ) / n,
        mean_queries=statistics.fmean(succ) if succ else None,
        median_queries=float(statistics.median(succ)) if succ else None,
        fasr=100.0 * first / n,
        n_examples=n,
        rows=list(rows or []),
    )


def emit_curve(results: Iterable, query_grid: Iterable[int]) -> list:
    """``[(q, ASR@q)]`` where ASR@q counts successes using at most q queries."""
    triples = [_fields(r) for r in results]
    n = max(len(triples), 1)
    out = []
    for q in sorted(set(int(q) for q in query_grid)):
        hits = sum(1 for ok, used, _ in triples if ok and used <= q)
        out.append((q, 100.0 * hits / n))
    return out
