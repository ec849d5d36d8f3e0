"""Transaction and artwork-metadata ingestion, cleaning and splits.

Transactions arrive as a CSV with columns ``user_id,transaction_ordinal,
item_id`` (one row per purchased item). Metadata arrives as
``item_id,<attr1>,<attr2>,...`` with an empty cell meaning missing. Files
are UTF-8 and commas inside ids are not supported.

The row order of the transactions file is the global chronology: the
first appearance of a (user, ordinal) pair fixes when that transaction
happened relative to every other user's.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Transaction:
    user_id: str
    ordinal: int
    item_ids: frozenset[str]


@dataclass
class TransactionLog:
    """Time-ordered purchase events; every artwork is sold at most once."""

    transactions: list[Transaction]

    def __post_init__(self):
        next_ordinal: dict[str, int] = {}
        seen_items: dict[str, tuple[str, int]] = {}
        for t in self.transactions:
            expected = next_ordinal.get(t.user_id, 0)
            if t.ordinal != expected:
                raise DatasetError(
                    f"user {t.user_id!r}: transaction ordinal {t.ordinal} "
                    f"is not contiguous (expected {expected})"
                )
            next_ordinal[t.user_id] = t.ordinal + 1
            if not t.item_ids:
                raise DatasetError(f"user {t.user_id!r} transaction {t.ordinal} is empty")
            for item in t.item_ids:
                if item in seen_items:
                    u, o = seen_items[item]
                    raise DatasetError(
                        f"item {item!r} sold twice: ({u!r},{o}) and ({t.user_id!r},{t.ordinal})"
                    )
                seen_items[item] = (t.user_id, t.ordinal)

    def __len__(self) -> int:
        return len(self.transactions)

    @property
    def users(self) -> list[str]:
        out, seen = [], set()
        for t in self.transactions:
            if t.user_id not in seen:
                seen.add(t.user_id)
                out.append(t.user_id)
        return out

    def user_transactions(self, user_id: str) -> list[Transaction]:
        found = [t for t in self.transactions if t.user_id == user_id]
        if not found:
            raise KeyError(f"unknown user {user_id!r}")
        return found

    @property
    def item_ids(self) -> set[str]:
        out: set[str] = set()
        for t in self.transactions:
            out |= t.item_ids
        return out


def load_transactions(path) -> TransactionLog:
    """Group per-item purchase rows into a TransactionLog.

    Rows of one transaction need not be adjacent, but a user's ordinals
    must appear in order and without gaps; an item appearing twice
    anywhere violates the unique-artwork rule.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file")
        if [h.strip() for h in header] != ["user_id", "transaction_ordinal", "item_id"]:
            raise DatasetError(f"{path}: unexpected header {header}")
        order: list[tuple[str, int]] = []
        groups: dict[tuple[str, int], list[str]] = {}
        current_ordinal: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise DatasetError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            user, ordinal_s, item = row
            try:
                ordinal = int(ordinal_s)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: bad ordinal {ordinal_s!r}") from None
            prev = current_ordinal.get(user)
            if prev is None:
                if ordinal != 0:
                    raise DatasetError(
                        f"{path}:{lineno}: user {user!r} starts at ordinal {ordinal}, not 0"
                    )
            elif ordinal not in (prev, prev + 1):
                raise DatasetError(
                    f"{path}:{lineno}: user {user!r} jumps from ordinal {prev} to {ordinal}"
                )
            current_ordinal[user] = ordinal
            key = (user, ordinal)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(item)
    if not order:
        raise DatasetError(f"{path}: no transaction rows")
    transactions = [
        Transaction(user, ordinal, frozenset(groups[(user, ordinal)]))
        for user, ordinal in order
    ]
    return TransactionLog(transactions)


MISSING = None  # explicit missing marker in metadata rows


@dataclass
class MetadataTable:
    """Per-item attributes: categorical labels as strings, numeric as ints."""

    attributes: tuple[str, ...]
    rows: dict[str, dict]  # item_id -> {attribute: str | int | None}

    def __len__(self) -> int:
        return len(self.rows)

    def _check_attribute(self, attribute: str) -> None:
        if attribute not in self.attributes:
            raise DatasetError(f"unknown attribute {attribute!r} (have {list(self.attributes)})")

    def values(self, attribute: str) -> list:
        self._check_attribute(attribute)
        return [row[attribute] for row in self.rows.values()]


def load_metadata(path) -> MetadataTable:
    """Read metadata.csv; columns whose every value parses as int are numeric."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file")
        if not header or header[0].strip() != "item_id":
            raise DatasetError(f"{path}: first column must be item_id, got {header[:1]}")
        attributes = tuple(h.strip() for h in header[1:])
        rows: dict[str, dict] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(attributes) + 1:
                raise DatasetError(
                    f"{path}:{lineno}: expected {len(attributes) + 1} fields, got {len(row)}"
                )
            item_id = row[0]
            if item_id in rows:
                raise DatasetError(f"{path}:{lineno}: duplicate item id {item_id!r}")
            rows[item_id] = {
                attr: (cell if cell != "" else MISSING)
                for attr, cell in zip(attributes, row[1:])
            }
    for attr in attributes:
        cells = [r[attr] for r in rows.values() if r[attr] is not MISSING]
        if cells and all(_is_int(c) for c in cells):
            for r in rows.values():
                if r[attr] is not MISSING:
                    r[attr] = int(r[attr])
    return MetadataTable(attributes, rows)


def _is_int(cell: str) -> bool:
    try:
        int(cell)
        return True
    except ValueError:
        return False


def drop_sparse_attributes(meta: MetadataTable, min_present_fraction: float) -> MetadataTable:
    """Remove attributes present in less than the given fraction of rows.

    The "mostly empty" threshold is a caller decision, never a baked-in
    constant.
    """
    if not 0.0 <= min_present_fraction <= 1.0:
        raise DatasetError(f"min_present_fraction must be in [0, 1], got {min_present_fraction}")
    n = len(meta.rows)
    keep = []
    for attr in meta.attributes:
        present = sum(1 for r in meta.rows.values() if r[attr] is not MISSING)
        if n == 0 or present / n >= min_present_fraction:
            keep.append(attr)
    rows = {
        item: {attr: row[attr] for attr in keep} for item, row in meta.rows.items()
    }
    return MetadataTable(tuple(keep), rows)


def drop_incomplete(meta: MetadataTable, required: list[str]) -> MetadataTable:
    """Remove rows missing any of the required attributes."""
    for attr in required:
        meta._check_attribute(attr)
    rows = {
        item: dict(row)
        for item, row in meta.rows.items()
        if all(row[attr] is not MISSING for attr in required)
    }
    return MetadataTable(meta.attributes, rows)


def filter_rare_labels(meta: MetadataTable, attribute: str, min_count: int) -> MetadataTable:
    """Remove rows whose attribute value occurs fewer than min_count times.

    Missing values never reach the count threshold, so those rows are
    removed as well.
    """
    meta._check_attribute(attribute)
    if min_count < 1:
        raise DatasetError(f"min_count must be >= 1, got {min_count}")
    counts: dict = {}
    for row in meta.rows.values():
        v = row[attribute]
        if v is not MISSING:
            counts[v] = counts.get(v, 0) + 1
    rows = {
        item: dict(row)
        for item, row in meta.rows.items()
        if row[attribute] is not MISSING and counts[row[attribute]] >= min_count
    }
    return MetadataTable(meta.attributes, rows)


@dataclass(frozen=True)
class LabelVocabulary:
    """Bijection between an attribute's labels and [0, n_classes)."""

    attribute: str
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise DatasetError(f"duplicate labels in vocabulary for {self.attribute!r}")
        object.__setattr__(self, "_map", {label: i for i, label in enumerate(self.labels)})

    def __len__(self) -> int:
        return len(self.labels)

    def index(self, label) -> int:
        try:
            return self._map[str(label)]
        except KeyError:
            raise KeyError(f"label {label!r} not in vocabulary for {self.attribute!r}") from None


def build_vocab(meta: MetadataTable, attribute: str) -> LabelVocabulary:
    """Lexicographically ordered vocabulary of an attribute's labels."""
    meta._check_attribute(attribute)
    labels = sorted({str(row[attribute]) for row in meta.rows.values() if row[attribute] is not MISSING})
    if not labels:
        raise DatasetError(f"attribute {attribute!r} has no non-missing values")
    return LabelVocabulary(attribute, tuple(labels))


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]
    seed: int


def split_items(
    items: list[str],
    proportions: tuple[float, float, float] = (0.7, 0.2, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Deterministic, disjoint train/validation/test split.

    Train and validation sizes are the rounded proportional shares and the
    test set takes the rest, which keeps every part within one item of its
    exact share.
    """
    if abs(sum(proportions) - 1.0) > 1e-9:
        raise DatasetError(f"proportions {proportions} do not sum to 1")
    if any(p < 0 for p in proportions):
        raise DatasetError(f"proportions must be non-negative, got {proportions}")
    if len(items) < 3:
        raise DatasetError(f"need at least 3 items to split, got {len(items)}")
    if len(set(items)) != len(items):
        raise DatasetError("duplicate item ids in split input")
    n = len(items)
    n_train = math.floor(n * proportions[0] + 0.5)
    n_val = math.floor(n * proportions[1] + 0.5)
    rng = np.random.default_rng(seed)
    shuffled = [items[i] for i in rng.permutation(n)]
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        validation=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
        seed=seed,
    )
