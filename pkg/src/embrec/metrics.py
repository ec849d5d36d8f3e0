"""Top-K ranking metrics with binary relevance.

All functions take the ranked recommendation ids (best first), the set of
relevant ids, and the cutoff k. Precision keeps k in the denominator even
when the list is shorter, so methods with small candidate sets stay
comparable.
"""

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

METRIC_NAMES = ("recall", "precision", "f1", "map", "mrr", "ndcg")


def _ranked_ids(recs) -> list[str]:
    ids = list(getattr(recs, "ids", recs))
    return [getattr(r, "item_id", r) if not isinstance(r, str) else r for r in ids]


def _check(relevant: set, k: int) -> None:
    if not relevant:
        raise ValueError("relevant set is empty")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")


def recall_at_k(recs, relevant: set, k: int) -> float:
    _check(relevant, k)
    hits = sum(1 for item in _ranked_ids(recs)[:k] if item in relevant)
    return hits / len(relevant)


def precision_at_k(recs, relevant: set, k: int) -> float:
    _check(relevant, k)
    hits = sum(1 for item in _ranked_ids(recs)[:k] if item in relevant)
    return hits / k


def f1_at_k(recs, relevant: set, k: int) -> float:
    r = recall_at_k(recs, relevant, k)
    p = precision_at_k(recs, relevant, k)
    if r + p == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def mrr_at_k(recs, relevant: set, k: int) -> float:
    _check(relevant, k)
    for rank, item in enumerate(_ranked_ids(recs)[:k], start=1):
        if item in relevant:
            return 1.0 / rank
    return 0.0


def map_at_k(recs, relevant: set, k: int) -> float:
    """Average precision at the relevant ranks, normalized by min(|relevant|, k)."""
    _check(relevant, k)
    hits = 0
    total = 0.0
    for rank, item in enumerate(_ranked_ids(recs)[:k], start=1):
        if item in relevant:
            hits += 1
            total += hits / rank
    return total / min(len(relevant), k)


def ndcg_at_k(recs, relevant: set, k: int) -> float:
    """Binary-gain DCG with 1/log2(rank+1) discount, normalized by the ideal list."""
    _check(relevant, k)
    dcg = 0.0
    for rank, item in enumerate(_ranked_ids(recs)[:k], start=1):
        if item in relevant:
            dcg += 1.0 / math.log2(rank + 1)
    ideal = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(len(relevant), k) + 1))
    return dcg / ideal


@dataclass(frozen=True)
class TransactionScores:
    """One evaluated transaction's metric values."""

    recall: float
    precision: float
    f1: float
    map: float
    mrr: float
    ndcg: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.recall, self.precision, self.f1, self.map, self.mrr, self.ndcg)


def score_transaction(recs, relevant: set, k: int) -> TransactionScores:
    return TransactionScores(
        recall=recall_at_k(recs, relevant, k),
        precision=precision_at_k(recs, relevant, k),
        f1=f1_at_k(recs, relevant, k),
        map=map_at_k(recs, relevant, k),
        mrr=mrr_at_k(recs, relevant, k),
        ndcg=ndcg_at_k(recs, relevant, k),
    )


@dataclass
class MetricResult:
    """Per-transaction metric values plus their macro-averages."""

    k: int
    per_transaction: list[TransactionScores]
    recall: float
    precision: float
    f1: float
    map: float
    mrr: float
    ndcg: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def aggregate(per_transaction: Iterable[TransactionScores], k: int) -> MetricResult:
    """Unweighted arithmetic mean of each metric across transactions."""
    scores = list(per_transaction)
    if not scores:
        raise ValueError("cannot aggregate an empty result list")
    n = len(scores)
    means = [sum(s.as_tuple()[i] for s in scores) / n for i in range(len(METRIC_NAMES))]
    return MetricResult(k, scores, *means)


def mean_of_results(results: Sequence[MetricResult]) -> MetricResult:
    """Average several MetricResults metric-wise (e.g. random-baseline trials)."""
    if not results:
        raise ValueError("cannot average an empty result list")
    if len({r.k for r in results}) != 1:
        raise ValueError("cannot average results with different k")
    n = len(results)
    means = [sum(getattr(r, name) for r in results) / n for name in METRIC_NAMES]
    per_transaction = [s for r in results for s in r.per_transaction]
    return MetricResult(results[0].k, per_transaction, *means)
