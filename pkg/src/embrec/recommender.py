"""User profiles from previous purchases and cosine-similarity ranking.

All operations are pure functions over immutable inputs; each artwork is
unique, so chronology decides what is still available to recommend.
"""

from dataclasses import dataclass

import numpy as np

from .dataset import TransactionLog
from .embedding_store import EmbeddingMatrix

AGGREGATIONS = ("max", "mean")


@dataclass(frozen=True)
class UserProfile:
    """Embeddable purchase history of one user up to some moment."""

    user_id: str
    profile_item_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.profile_item_ids)


@dataclass(frozen=True)
class RecommendationList:
    """Ranked (item_id, score) pairs, best first, ties broken by id."""

    items: tuple[tuple[str, float], ...]

    def __post_init__(self):
        for (id_a, s_a), (id_b, s_b) in zip(self.items, self.items[1:]):
            if s_b > s_a or (s_b == s_a and id_b <= id_a):
                raise ValueError(f"ranking order violated at {id_a!r}/{id_b!r}")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def ids(self) -> list[str]:
        return [item_id for item_id, _ in self.items]


def build_profile(log: TransactionLog, user: str, before_ordinal: int) -> UserProfile:
    """Items the user bought in transactions with ordinal < before_ordinal."""
    items: list[str] = []
    for t in log.user_transactions(user):
        if t.ordinal < before_ordinal:
            items.extend(sorted(t.item_ids))
    return UserProfile(user, tuple(items))


def candidate_set(
    log: TransactionLog,
    catalog: set[str],
    at: tuple[str, int],
    exclusion_scope: str = "global",
) -> set[str]:
    """Items still available when the given transaction is evaluated.

    Under the default global scope, everything sold by anyone strictly
    before that transaction is gone; under "user-only", only the
    evaluating user's own profile items are excluded. The evaluated
    transaction's own items remain available: they are the ground truth
    the recommender is asked to retrieve.
    """
    user, ordinal = at
    missing = log.item_ids - catalog
    if missing:
        raise ValueError(f"catalog is missing transacted items, e.g. {sorted(missing)[:5]}")
    if exclusion_scope not in ("global", "user-only"):
        raise ValueError(f"unknown exclusion scope {exclusion_scope!r}")
    excluded: set[str] = set()
    found = False
    for t in log.transactions:
        if t.user_id == user and t.ordinal == ordinal:
            found = True
            break
        if exclusion_scope == "global" or t.user_id == user:
            excluded |= t.item_ids
    if not found:
        raise KeyError(f"transaction ({user!r}, {ordinal}) not in log")
    return catalog - excluded


def score_candidates(
    profile: UserProfile,
    candidates: set[str],
    m: EmbeddingMatrix,
    aggregation: str = "max",
) -> list[tuple[str, float]]:
    """Aggregate cosine similarity of each candidate to the profile items."""
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    if len(profile) == 0:
        raise ValueError(f"user {profile.user_id!r} has an empty profile")
    if not candidates:
        raise ValueError("empty candidate set")
    cand_ids = sorted(candidates)
    cand_rows = np.array([m.row(i) for i in cand_ids])
    prof_rows = np.array([m.row(i) for i in profile.profile_item_ids])
    for ids, rows in ((cand_ids, cand_rows), (profile.profile_item_ids, prof_rows)):
        zero = np.flatnonzero(m.norms[rows] == 0.0)
        if zero.size:
            raise ValueError(f"zero-norm embedding for {ids[zero[0]]!r}")
    cand_unit = m.vectors[cand_rows] / m.norms[cand_rows, None]
    prof_unit = m.vectors[prof_rows] / m.norms[prof_rows, None]
    sims = cand_unit @ prof_unit.T
    scores = sims.max(axis=1) if aggregation == "max" else sims.mean(axis=1)
    return list(zip(cand_ids, scores.tolist()))


def top_k(scored: list[tuple[str, float]], k: int) -> RecommendationList:
    """K highest-scoring items; equal scores rank by ascending item id."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    ranked = sorted(scored, key=lambda pair: (-pair[1], pair[0]))
    return RecommendationList(tuple(ranked[:k]))
