import numpy as np
import pytest

from embrec.dataset import (
    DatasetError,
    MetadataTable,
    Transaction,
    TransactionLog,
    build_vocab,
    drop_incomplete,
    drop_sparse_attributes,
    filter_rare_labels,
    load_metadata,
    load_transactions,
    split_items,
)


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# ---------------------------------------------------------------- transactions

def test_load_transactions_groups_rows(tmp_path):
    path = write_csv(
        tmp_path / "t.csv",
        "user_id,transaction_ordinal,item_id\nu1,0,a\nu1,0,b\nu1,1,c\n",
    )
    log = load_transactions(path)
    assert [(t.user_id, t.ordinal, set(t.item_ids)) for t in log.transactions] == [
        ("u1", 0, {"a", "b"}),
        ("u1", 1, {"c"}),
    ]


def test_unique_artwork_violation(tmp_path):
    path = write_csv(
        tmp_path / "t.csv", "user_id,transaction_ordinal,item_id\nu1,0,a\nu2,0,a\n"
    )
    with pytest.raises(DatasetError, match="sold twice"):
        load_transactions(path)


def test_non_contiguous_ordinal(tmp_path):
    path = write_csv(
        tmp_path / "t.csv", "user_id,transaction_ordinal,item_id\nu1,0,a\nu1,2,b\n"
    )
    with pytest.raises(DatasetError, match="jumps"):
        load_transactions(path)


def test_first_ordinal_must_be_zero(tmp_path):
    path = write_csv(tmp_path / "t.csv", "user_id,transaction_ordinal,item_id\nu1,1,a\n")
    with pytest.raises(DatasetError, match="starts at ordinal 1"):
        load_transactions(path)


def test_empty_transactions_file(tmp_path):
    path = write_csv(tmp_path / "t.csv", "")
    with pytest.raises(DatasetError, match="empty"):
        load_transactions(path)
    path = write_csv(tmp_path / "t2.csv", "user_id,transaction_ordinal,item_id\n")
    with pytest.raises(DatasetError, match="no transaction rows"):
        load_transactions(path)


def test_interleaved_users_keep_file_order(tmp_path):
    path = write_csv(
        tmp_path / "t.csv",
        "user_id,transaction_ordinal,item_id\nu1,0,a\nu2,0,b\nu1,1,c\nu2,1,d\n",
    )
    log = load_transactions(path)
    assert [(t.user_id, t.ordinal) for t in log.transactions] == [
        ("u1", 0), ("u2", 0), ("u1", 1), ("u2", 1),
    ]


def test_transaction_log_invariants_direct():
    with pytest.raises(DatasetError, match="not contiguous"):
        TransactionLog([Transaction("u", 1, frozenset({"a"}))])
    with pytest.raises(DatasetError, match="sold twice"):
        TransactionLog(
            [
                Transaction("u", 0, frozenset({"a"})),
                Transaction("u", 1, frozenset({"a"})),
            ]
        )


# ------------------------------------------------------------------- metadata

def table(rows, attributes=("artist", "medium")):
    return MetadataTable(tuple(attributes), rows)


def test_load_metadata_types_and_missing(tmp_path):
    path = write_csv(
        tmp_path / "m.csv",
        "item_id,artist,year\ni1,alice,1990\ni2,bob,\ni3,,2001\n",
    )
    meta = load_metadata(path)
    assert meta.attributes == ("artist", "year")
    assert meta.rows["i1"] == {"artist": "alice", "year": 1990}
    assert meta.rows["i2"]["year"] is None
    assert meta.rows["i3"]["artist"] is None
    assert isinstance(meta.rows["i3"]["year"], int)


def test_load_metadata_duplicate_item(tmp_path):
    path = write_csv(tmp_path / "m.csv", "item_id,artist\ni1,a\ni1,b\n")
    with pytest.raises(DatasetError, match="duplicate"):
        load_metadata(path)


def test_filter_rare_labels_basic():
    meta = table(
        {
            "i1": {"artist": "x", "medium": "oil"},
            "i2": {"artist": "x", "medium": "oil"},
            "i3": {"artist": "y", "medium": "oil"},
        }
    )
    out = filter_rare_labels(meta, "artist", 2)
    assert set(out.rows) == {"i1", "i2"}


def test_filter_rare_labels_min_count_one_removes_only_missing():
    meta = table(
        {
            "i1": {"artist": "x", "medium": "oil"},
            "i2": {"artist": None, "medium": "oil"},
        }
    )
    out = filter_rare_labels(meta, "artist", 1)
    assert set(out.rows) == {"i1"}


def test_filter_rare_labels_zipf_against_counting_oracle():
    rng = np.random.default_rng(42)
    labels = [f"artist{int(z)}" for z in rng.zipf(1.6, size=1000) % 40]
    rows = {f"i{i}": {"artist": lab, "medium": "oil"} for i, lab in enumerate(labels)}
    meta = table(rows)
    min_count = 100

    # independent count-then-filter oracle
    counts = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    expected = {item for item, row in rows.items() if counts[row["artist"]] >= min_count}

    out = filter_rare_labels(meta, "artist", min_count)
    assert set(out.rows) == expected
    assert all(out.rows[i] == rows[i] for i in out.rows)  # survivors unchanged


def test_filter_rare_labels_idempotent():
    rng = np.random.default_rng(1)
    rows = {
        f"i{i}": {"artist": f"a{rng.integers(0, 12)}", "medium": "oil"} for i in range(300)
    }
    meta = table(rows)
    once = filter_rare_labels(meta, "artist", 20)
    twice = filter_rare_labels(once, "artist", 20)
    assert set(once.rows) == set(twice.rows)


def test_filter_rare_labels_errors():
    meta = table({"i1": {"artist": "x", "medium": "oil"}})
    with pytest.raises(DatasetError, match="unknown attribute"):
        filter_rare_labels(meta, "nope", 1)
    with pytest.raises(DatasetError, match="min_count"):
        filter_rare_labels(meta, "artist", 0)


def test_drop_incomplete():
    meta = table(
        {
            "i1": {"artist": "x", "medium": "oil"},
            "i2": {"artist": None, "medium": "oil"},
            "i3": {"artist": "y", "medium": None},
        }
    )
    out = drop_incomplete(meta, ["artist", "medium"])
    assert set(out.rows) == {"i1"}
    assert set(drop_incomplete(meta, ["medium"]).rows) == {"i1", "i2"}
    full = table({"i1": {"artist": "x", "medium": "oil"}})
    assert set(drop_incomplete(full, ["artist", "medium"]).rows) == {"i1"}
    with pytest.raises(DatasetError, match="unknown attribute"):
        drop_incomplete(meta, ["nope"])


def test_drop_incomplete_matches_row_scan_oracle():
    rng = np.random.default_rng(2)
    rows = {}
    for i in range(500):
        rows[f"i{i}"] = {
            "artist": f"a{rng.integers(0, 5)}" if rng.random() > 0.3 else None,
            "medium": "oil" if rng.random() > 0.2 else None,
        }
    meta = table(rows)
    required = ["artist", "medium"]
    expected = {
        item for item, row in rows.items() if all(row[a] is not None for a in required)
    }
    assert set(drop_incomplete(meta, required).rows) == expected


def test_paper_cleaning_order_leaves_no_rare_label():
    # drop_incomplete then filter_rare_labels must leave every surviving
    # label at or above the threshold
    rng = np.random.default_rng(3)
    rows = {}
    for i in range(800):
        rows[f"i{i}"] = {
            "artist": f"a{rng.zipf(1.8) % 25}" if rng.random() > 0.1 else None,
            "medium": f"m{rng.integers(0, 4)}" if rng.random() > 0.1 else None,
        }
    meta = drop_incomplete(table(rows), ["artist", "medium"])
    min_count = 30
    out = filter_rare_labels(meta, "artist", min_count)
    counts = {}
    for row in out.rows.values():
        counts[row["artist"]] = counts.get(row["artist"], 0) + 1
    assert all(c >= min_count for c in counts.values())


def test_drop_sparse_attributes():
    rows = {
        "i1": {"artist": "x", "note": None},
        "i2": {"artist": "y", "note": None},
        "i3": {"artist": None, "note": "z"},
    }
    meta = MetadataTable(("artist", "note"), rows)
    out = drop_sparse_attributes(meta, 0.5)
    assert out.attributes == ("artist",)
    assert out.rows["i3"] == {"artist": None}


# --------------------------------------------------------------------- splits

def test_split_sizes_ten_items():
    split = split_items([f"i{i}" for i in range(10)], seed=4)
    assert (len(split.train), len(split.validation), len(split.test)) == (7, 2, 1)


def test_split_deterministic():
    items = [f"i{i}" for i in range(57)]
    assert split_items(items, seed=9) == split_items(items, seed=9)
    assert split_items(items, seed=9) != split_items(items, seed=10)


def test_split_sizes_at_omniart_scale():
    # 634,508 items at 70/20/10: rounded train and validation shares with the
    # rest in test keeps every part within one item of its exact share
    n = 634508
    n_train = round(n * 0.7)
    n_val = round(n * 0.2)
    assert (n_train, n_val, n - n_train - n_val) == (444156, 126902, 63450)
    items = [f"i{i}" for i in range(n)]
    split = split_items(items, seed=0)
    assert (len(split.train), len(split.validation), len(split.test)) == (
        444156, 126902, 63450,
    )
    for size, share in ((444156, 0.7), (126902, 0.2), (63450, 0.1)):
        assert abs(size - share * n) <= 1.0


def test_split_partitions():
    rng = np.random.default_rng(8)
    for n in (3, 10, 101, 1234, 10000):
        items = [f"i{i}" for i in range(n)]
        split = split_items(items, seed=int(rng.integers(0, 1000)))
        parts = [set(split.train), set(split.validation), set(split.test)]
        assert parts[0] | parts[1] | parts[2] == set(items)
        assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])


def test_split_errors():
    with pytest.raises(DatasetError, match="at least 3"):
        split_items(["a", "b"])
    with pytest.raises(DatasetError, match="sum to 1"):
        split_items(["a", "b", "c"], proportions=(0.5, 0.2, 0.2))


# ---------------------------------------------------------------- vocabulary

def test_build_vocab_lexicographic():
    meta = table(
        {
            "i1": {"artist": "x", "medium": "oil"},
            "i2": {"artist": "y", "medium": "acrylic"},
        }
    )
    vocab = build_vocab(meta, "medium")
    assert vocab.labels == ("acrylic", "oil")
    assert vocab.index("acrylic") == 0
    assert vocab.index("oil") == 1


def test_build_vocab_single_label():
    meta = table({"i1": {"artist": "x", "medium": "oil"}})
    vocab = build_vocab(meta, "medium")
    assert len(vocab) == 1
    assert vocab.index("oil") == 0


def test_build_vocab_47_artwork_types():
    # the Omniart-style cleaning ends with 47 artwork types
    rows = {
        f"i{i}": {"artist": "a", "medium": f"type{i % 47:02d}"} for i in range(470)
    }
    vocab = build_vocab(table(rows), "medium")
    assert len(vocab) == 47


def test_build_vocab_all_missing():
    meta = table({"i1": {"artist": "x", "medium": None}})
    with pytest.raises(DatasetError, match="no non-missing"):
        build_vocab(meta, "medium")
    with pytest.raises(KeyError):
        build_vocab(table({"i1": {"artist": "x", "medium": "oil"}}), "medium").index("tempera")
