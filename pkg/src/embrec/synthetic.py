"""Synthetic stand-ins for the proprietary purchase and catalog data.

The planted-preference generator places items in Gaussian clusters and
has every user buy inside one home cluster, so taste is recoverable from
the embedding by construction. Each item vector carries two blocks:

  * a signal block near the item's cluster center (what users care about)
  * a distractor block near an independently assigned group center

Labels derived from the cluster index are aligned with taste; labels
derived from the distractor group are learnable but carry no taste
information, which is what makes fine-tuning on them harmful.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .dataset import MetadataTable, Transaction, TransactionLog
from .embedding_store import EmbeddingMatrix


@dataclass
class PlantedDataset:
    embedding: EmbeddingMatrix
    log: TransactionLog
    metadata: MetadataTable
    cluster_of: dict[str, int]
    distractor_of: dict[str, int]


def make_planted_dataset(
    seed: int,
    n_clusters: int = 6,
    items_per_cluster: int = 60,
    n_users: int = 48,
    signal_dim: int = 12,
    distractor_dim: int = 12,
    n_distractor_groups: int = 4,
    signal_noise: float = 0.55,
    distractor_noise: float = 0.25,
    transactions_per_user: tuple[int, int] = (3, 4),
    items_per_transaction: tuple[int, int] = (1, 2),
) -> PlantedDataset:
    rng = np.random.default_rng(seed)
    n_items = n_clusters * items_per_cluster
    item_ids = [f"art{idx:05d}" for idx in range(n_items)]
    clusters = np.repeat(np.arange(n_clusters), items_per_cluster)
    rng.shuffle(clusters)
    groups = rng.integers(0, n_distractor_groups, size=n_items)

    def unit_rows(n, d):
        raw = rng.normal(size=(n, d))
        return raw / np.linalg.norm(raw, axis=1, keepdims=True)

    signal_centers = unit_rows(n_clusters, signal_dim)
    distractor_centers = unit_rows(n_distractor_groups, distractor_dim)
    signal = signal_centers[clusters] + signal_noise * rng.normal(size=(n_items, signal_dim))
    distract = distractor_centers[groups] + distractor_noise * rng.normal(
        size=(n_items, distractor_dim)
    )
    vectors = np.hstack([signal, distract])
    embedding = EmbeddingMatrix.from_arrays(item_ids, vectors)

    # Interleave users' purchases into one global chronology; pools shrink as
    # artworks sell, honoring the unique-artwork rule.
    pools: list[list[str]] = [[] for _ in range(n_clusters)]
    for item, c in zip(item_ids, clusters):
        pools[c].append(item)
    for pool in pools:
        rng.shuffle(pool)
    home = rng.integers(0, n_clusters, size=n_users)
    plans = [int(rng.integers(transactions_per_user[0], transactions_per_user[1] + 1))
             for _ in range(n_users)]
    pending = [(u, t) for u in range(n_users) for t in range(plans[u])]
    order = rng.permutation(len(pending))
    next_ordinal = [0] * n_users
    transactions = []
    for idx in order:
        user, _ = pending[idx]
        pool = pools[home[user]]
        want = int(rng.integers(items_per_transaction[0], items_per_transaction[1] + 1))
        take = min(want, len(pool))
        if take == 0:
            continue
        bought, pools[home[user]] = pool[:take], pool[take:]
        transactions.append(
            Transaction(f"user{user:04d}", next_ordinal[user], frozenset(bought))
        )
        next_ordinal[user] += 1
    log = TransactionLog(transactions)

    styles = [f"style{c}" for c in range(n_clusters)]
    motifs = [f"motif{g}" for g in range(n_distractor_groups)]
    rows = {
        item: {"style": styles[clusters[i]], "motif": motifs[groups[i]]}
        for i, item in enumerate(item_ids)
    }
    metadata = MetadataTable(("style", "motif"), rows)
    return PlantedDataset(
        embedding=embedding,
        log=log,
        metadata=metadata,
        cluster_of={item: int(c) for item, c in zip(item_ids, clusters)},
        distractor_of={item: int(g) for item, g in zip(item_ids, groups)},
    )


def permute_rows(m: EmbeddingMatrix, seed: int) -> EmbeddingMatrix:
    """Reassign the vectors to shuffled ids, destroying any taste alignment."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(m))
    return EmbeddingMatrix.from_arrays(m.item_ids, m.vectors[perm], dim=m.dim)


def random_log(
    seed: int,
    n_users: int,
    n_items: int,
    max_transactions_per_user: int = 4,
    max_items_per_transaction: int = 3,
) -> TransactionLog:
    """Arbitrary interleaved multi-user log for replay stress tests."""
    rng = np.random.default_rng(seed)
    unsold = [f"it{idx:05d}" for idx in range(n_items)]
    rng.shuffle(unsold)
    plans = [int(rng.integers(1, max_transactions_per_user + 1)) for _ in range(n_users)]
    pending = [(u, t) for u in range(n_users) for t in range(plans[u])]
    order = rng.permutation(len(pending))
    next_ordinal = [0] * n_users
    transactions = []
    for idx in order:
        user, _ = pending[idx]
        want = int(rng.integers(1, max_items_per_transaction + 1))
        take = min(want, len(unsold))
        if take == 0:
            break
        bought, unsold = unsold[:take], unsold[take:]
        transactions.append(Transaction(f"u{user:04d}", next_ordinal[user], frozenset(bought)))
        next_ordinal[user] += 1
    return TransactionLog(transactions)


def random_embedding(seed: int, item_ids, dim: int = 16) -> EmbeddingMatrix:
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(len(item_ids), dim))
    return EmbeddingMatrix.from_arrays(list(item_ids), vectors, dim=dim)


def write_transactions_csv(log: TransactionLog, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["user_id", "transaction_ordinal", "item_id"])
        for t in log.transactions:
            for item in sorted(t.item_ids):
                writer.writerow([t.user_id, t.ordinal, item])


def write_metadata_csv(meta: MetadataTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", *meta.attributes])
        for item, row in meta.rows.items():
            writer.writerow([item] + ["" if row[a] is None else row[a] for a in meta.attributes])
