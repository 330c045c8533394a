"""Run evaluation: graded nDCG@k, paired t-tests, and a latency harness.

nDCG uses the TREC convention for graded judgments: exponential gains
(2^grade - 1) discounted by log2(rank + 1), normalized by the ideal DCG of
the query's judged grades. Queries judged but carrying no positive grade
have an undefined ideal and score 0; they are flagged so comparisons can
exclude them.

The paired t-test computes its two-sided p-value from a regularized
incomplete-beta evaluation of the t distribution's CDF, so the package
needs no statistics dependency.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .datamodel import Qrels, RankedList
from .errors import InputError


@dataclass(frozen=True)
class MetricReport:
    """Per-query values and their mean for one metric at one cutoff."""

    metric: str
    cutoff: int
    per_query: dict[str, float]
    mean: float
    zero_idcg: frozenset[str]


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    n: int
    degenerate: bool = False


@dataclass(frozen=True)
class LatencyReport:
    per_query_ms: dict[str, float]
    mean_ms: float


def _dcg(grades: Sequence[int]) -> float:
    return sum(
        (2.0 ** grade - 1.0) / math.log2(position + 1)
        for position, grade in enumerate(grades, start=1)
    )


def ndcg_at_k(runs: Mapping[str, RankedList], qrels: Qrels, k: int) -> MetricReport:
    """nDCG@k for every judged query.

    Unjudged passages count as grade 0; judged queries absent from the run
    score 0; queries whose judgments are all 0 score 0 and are flagged.
    """
    if k < 1:
        raise InputError(f"nDCG cutoff must be >= 1, got {k}")
    per_query: dict[str, float] = {}
    zero_idcg: set[str] = set()
    for query_id in qrels.query_ids():
        judged = qrels.grades_for(query_id)
        ideal = sorted(judged.values(), reverse=True)[:k]
        idcg = _dcg(ideal)
        if idcg == 0.0:
            per_query[query_id] = 0.0
            zero_idcg.add(query_id)
            continue
        ranked = runs.get(query_id)
        if ranked is None or not ranked.entries:
            per_query[query_id] = 0.0
            continue
        gains = [judged.get(e.passage_id, 0) for e in ranked.entries[:k]]
        per_query[query_id] = _dcg(gains) / idcg
    mean = sum(per_query.values()) / len(per_query) if per_query else 0.0
    return MetricReport(
        metric="ndcg",
        cutoff=k,
        per_query=per_query,
        mean=mean,
        zero_idcg=frozenset(zero_idcg),
    )


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, dof: int) -> float:
    """P(|T| >= |t|) for T ~ Student's t with ``dof`` degrees of freedom."""
    if dof < 1:
        raise InputError(f"degrees of freedom must be >= 1, got {dof}")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t))


def paired_t_test(
    a: Mapping[str, float], b: Mapping[str, float]
) -> TTestResult:
    """Two-sided paired t-test over the queries common to both maps.

    Differences with zero variance short-circuit: all-zero differences give
    (t=0, p=1); a constant nonzero difference gives p=0 with the degenerate
    flag set.
    """
    common = sorted(set(a) & set(b))
    if not common:
        raise InputError("paired t-test needs a non-empty shared query set")
    n = len(common)
    if n < 2:
        raise InputError(f"paired t-test needs at least 2 shared queries, got {n}")
    diffs = [a[q] - b[q] for q in common]
    mean = sum(diffs) / n
    variance = sum((d - mean) ** 2 for d in diffs) / (n - 1)
    sd = math.sqrt(variance)
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p=1.0, n=n)
        return TTestResult(
            t=math.copysign(math.inf, mean), p=0.0, n=n, degenerate=True
        )
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, p=student_t_two_sided_p(t, n - 1), n=n)


def measure_latency(stage: Callable, queries: Sequence) -> LatencyReport:
    """Wall-clock per query of a pipeline stage, serialized to avoid
    contention skew. Index loads and file I/O belong outside ``stage``."""
    if not queries:
        raise InputError("empty query set")
    per_query: dict[str, float] = {}
    for position, query in enumerate(queries):
        key = getattr(query, "query_id", None) or str(position)
        started = time.perf_counter()
        stage(query)
        per_query[key] = (time.perf_counter() - started) * 1000.0
    mean_ms = sum(per_query.values()) / len(per_query)
    return LatencyReport(per_query_ms=per_query, mean_ms=mean_ms)
