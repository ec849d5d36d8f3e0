import json
import math

import numpy as np
import pytest

from embrec.dataset import Transaction, TransactionLog
from embrec.embedding_store import EmbeddingMatrix, save_embeddings
from embrec.harness import (
    EvalReport,
    ExperimentConfig,
    FinetuneBlock,
    FinetuneTask,
    HarnessError,
    MethodSpec,
    random_baseline,
    replay_evaluate,
    run_experiment,
)
from embrec.synthetic import (
    make_planted_dataset,
    random_embedding,
    random_log,
    write_metadata_csv,
    write_transactions_csv,
)


def log_of(rows):
    return TransactionLog([Transaction(u, o, frozenset(items)) for u, o, items in rows])


# ---------------------------------------------------------------------- replay

def test_replay_single_user_certainty():
    # the second transaction's item is by construction the most similar to
    # the first's, so it must be retrieved
    m = EmbeddingMatrix.from_arrays(
        ["p", "hit", "far1", "far2"],
        [[1.0, 0.0], [0.9, 0.1], [-1.0, 0.0], [0.0, -1.0]],
    )
    log = log_of([("u1", 0, {"p"}), ("u1", 1, {"hit"})])
    outcome = replay_evaluate(log, m, k=1)
    assert outcome.evaluated == 1
    assert outcome.skipped == 1
    assert outcome.result.recall == 1.0


def test_replay_all_single_transactions_evaluates_nothing():
    m = random_embedding(0, ["a", "b", "c"])
    log = log_of([("u1", 0, {"a"}), ("u2", 0, {"b"})])
    outcome = replay_evaluate(log, m, k=2)
    assert outcome.evaluated == 0
    assert outcome.skipped == 2
    assert outcome.result is None
    assert outcome.mean_candidate_size is None


def test_replay_missing_embeddings_error():
    m = random_embedding(0, ["a"])
    log = log_of([("u1", 0, {"a"}), ("u1", 1, {"b"})])
    with pytest.raises(HarnessError, match="missing transacted"):
        replay_evaluate(log, m, k=2)


def test_replay_trace_matches_candidate_sizes():
    log = random_log(5, n_users=12, n_items=120)
    m = random_embedding(1, sorted(log.item_ids | {f"x{i}" for i in range(30)}))
    outcome = replay_evaluate(log, m, k=10, collect_trace=True)
    assert len(outcome.trace) == outcome.evaluated
    mean_size = sum(len(t.candidates) for t in outcome.trace) / len(outcome.trace)
    assert outcome.mean_candidate_size == pytest.approx(mean_size)
    for t in outcome.trace:
        assert len(t.recommended) <= 10
        assert set(t.recommended) <= t.candidates


def full_pipeline_oracle(log, matrix, k):
    """Independent end-to-end reimplementation with plain loops."""
    sold = set()
    profiles = {}
    per_transaction = []
    catalog = set(matrix.item_ids)
    for t in log.transactions:
        profile = profiles.setdefault(t.user_id, [])
        if profile:
            candidates = catalog - sold
            scored = []
            for c in sorted(candidates):
                best = -2.0
                for p in profile:
                    vc, vp = matrix.vector(c), matrix.vector(p)
                    cos = float(
                        np.dot(vc, vp) / (np.linalg.norm(vc) * np.linalg.norm(vp))
                    )
                    best = max(best, cos)
                scored.append((c, best))
            scored.sort(key=lambda pair: (-pair[1], pair[0]))
            ranked = [c for c, _ in scored[:k]]
            relevant = set(t.item_ids)
            hits = [1 if c in relevant else 0 for c in ranked]
            n_hits = sum(hits)
            recall = n_hits / len(relevant)
            precision = n_hits / k
            f1 = 0.0 if recall + precision == 0 else 2 * recall * precision / (recall + precision)
            mrr = next((1.0 / (i + 1) for i, h in enumerate(hits) if h), 0.0)
            ap, seen = 0.0, 0
            for i, h in enumerate(hits):
                if h:
                    seen += 1
                    ap += seen / (i + 1)
            ap /= min(len(relevant), k)
            dcg = sum(h / math.log2(i + 2) for i, h in enumerate(hits))
            idcg = sum(1.0 / math.log2(i + 2) for i in range(min(len(relevant), k)))
            per_transaction.append((recall, precision, f1, ap, mrr, dcg / idcg))
        for item in t.item_ids:
            profile.append(item)
        sold |= t.item_ids
    n = len(per_transaction)
    return [sum(row[i] for row in per_transaction) / n for i in range(6)], n


def test_replay_matches_full_pipeline_oracle():
    data = make_planted_dataset(2, n_clusters=3, items_per_cluster=12, n_users=8)
    outcome = replay_evaluate(data.log, data.embedding, k=5)
    expected, n = full_pipeline_oracle(data.log, data.embedding, k=5)
    assert outcome.evaluated == n
    got = [
        outcome.result.recall, outcome.result.precision, outcome.result.f1,
        outcome.result.map, outcome.result.mrr, outcome.result.ndcg,
    ]
    np.testing.assert_allclose(got, expected, atol=1e-12)


def test_replay_never_recommends_sold_items():
    log = random_log(11, n_users=40, n_items=500)
    m = random_embedding(3, sorted(log.item_ids | {f"x{i}" for i in range(80)}))
    outcome = replay_evaluate(log, m, k=15, collect_trace=True)
    sold = set()
    profiles = {}
    idx = 0
    for t in log.transactions:
        profile = profiles.setdefault(t.user_id, set())
        if profile:
            trace = outcome.trace[idx]
            idx += 1
            assert not (set(trace.recommended) & sold)
        sold |= t.item_ids
        profile |= t.item_ids
    assert idx == outcome.evaluated


# ------------------------------------------------------------- random baseline

def test_random_baseline_forced_hit():
    # candidate set of size k with one relevant item: recall is always 1
    log = log_of([("u1", 0, {"seed"}), ("u1", 1, {"hit"})])
    catalog = {"seed", "hit", "c1", "c2"}
    outcome = random_baseline(log, catalog, k=3, seed=0, trials=20)
    assert outcome.result.recall == 1.0
    assert outcome.mean_candidate_size == 3.0


def test_random_baseline_deterministic():
    log = random_log(17, n_users=10, n_items=100)
    catalog = log.item_ids
    a = random_baseline(log, catalog, k=5, seed=9, trials=10)
    b = random_baseline(log, catalog, k=5, seed=9, trials=10)
    assert a.result.as_dict() == b.result.as_dict()
    c = random_baseline(log, catalog, k=5, seed=10, trials=10)
    assert a.result.as_dict() != c.result.as_dict()


def test_random_baseline_recall_near_hypergeometric_expectation():
    # single relevant item among N candidates: E[recall@K] = K/N
    n_candidates, k, trials = 200, 20, 400
    items = [f"c{i}" for i in range(n_candidates - 1)]
    log = log_of([("u1", 0, {"seed"}), ("u1", 1, {"hit"})])
    catalog = set(items) | {"seed", "hit"}
    outcome = random_baseline(log, catalog, k=k, seed=3, trials=trials)
    p = k / n_candidates
    se = math.sqrt(p * (1 - p) / trials)
    assert abs(outcome.result.recall - p) < 3 * se


# ------------------------------------------------------------------- experiment

@pytest.fixture
def experiment_dir(tmp_path):
    data = make_planted_dataset(4, n_clusters=3, items_per_cluster=20, n_users=12)
    write_transactions_csv(data.log, tmp_path / "transactions.csv")
    write_metadata_csv(data.metadata, tmp_path / "metadata.csv")
    save_embeddings(data.embedding, tmp_path / "a.emb")
    rng = np.random.default_rng(0)
    other = EmbeddingMatrix.from_arrays(
        data.embedding.item_ids, rng.normal(size=data.embedding.vectors.shape)
    )
    save_embeddings(other, tmp_path / "b.emb")
    return tmp_path, data


def base_config(tmp_path, **overrides):
    config = ExperimentConfig(
        methods=[
            MethodSpec("aligned", tmp_path / "a.emb"),
            MethodSpec("noise", tmp_path / "b.emb"),
        ],
        transactions_path=tmp_path / "transactions.csv",
        metadata_path=tmp_path / "metadata.csv",
        k=10,
        random_trials=5,
        report_text=tmp_path / "report.txt",
        report_csv=tmp_path / "report.csv",
    )
    for key, value in overrides.items():
        setattr(config, key, value)
    return config


def test_run_experiment_rows_and_files(experiment_dir):
    tmp_path, _ = experiment_dir
    report = run_experiment(base_config(tmp_path))
    assert [r.label for r in report.rows] == ["aligned", "noise", "Random"]
    counts = {r.evaluated for r in report.rows}
    assert len(counts) == 1  # same skip set for every method
    assert (tmp_path / "report.txt").exists()
    assert (tmp_path / "report.csv").exists()
    text = (tmp_path / "report.txt").read_text()
    assert "R@10" in text and "nDCG@10" in text
    csv_lines = (tmp_path / "report.csv").read_text().strip().splitlines()
    assert csv_lines[0].startswith("method,recall,precision,f1,map,mrr,ndcg")
    assert len(csv_lines) == 4


def test_run_experiment_with_finetune_adds_row(experiment_dir):
    tmp_path, _ = experiment_dir
    config = base_config(
        tmp_path,
        finetune=FinetuneBlock(
            base_method="aligned",
            tasks=[FinetuneTask("style", "classification")],
            label="aligned-ft-style",
            learning_rate=0.01,
            batch_size=16,
            max_epochs=10,
            shared_dim=16,
            export_path=tmp_path / "tuned.emb",
            history_path=tmp_path / "history.csv",
        ),
    )
    report = run_experiment(config)
    assert [r.label for r in report.rows] == [
        "aligned", "noise", "aligned-ft-style", "Random",
    ]
    assert (tmp_path / "tuned.emb").exists()
    assert (tmp_path / "history.csv").read_text().startswith("epoch,train_loss,val_loss")
    assert any("best epoch" in note for note in report.notes)


def test_run_experiment_catalog_mismatch(experiment_dir):
    tmp_path, data = experiment_dir
    subset = EmbeddingMatrix.from_arrays(
        data.embedding.item_ids[:-1],
        data.embedding.vectors[:-1],
    )
    save_embeddings(subset, tmp_path / "b.emb")
    with pytest.raises(HarnessError, match="different catalog"):
        run_experiment(base_config(tmp_path))


def test_run_experiment_labels_errors(experiment_dir):
    tmp_path, _ = experiment_dir
    (tmp_path / "b.emb").write_bytes(b"garbage")
    with pytest.raises(HarnessError, match="noise"):
        run_experiment(base_config(tmp_path))


def test_run_experiment_deterministic(experiment_dir):
    tmp_path, _ = experiment_dir
    out1 = tmp_path / "r1"
    out2 = tmp_path / "r2"
    for out in (out1, out2):
        config = base_config(
            tmp_path, report_text=out / "report.txt", report_csv=out / "report.csv"
        )
        run_experiment(config)
    assert (out1 / "report.txt").read_bytes() == (out2 / "report.txt").read_bytes()
    assert (out1 / "report.csv").read_bytes() == (out2 / "report.csv").read_bytes()


def test_experiment_config_from_json(tmp_path):
    payload = {
        "methods": [{"label": "m1", "path": "emb/m1.emb"}],
        "transactions": "transactions.csv",
        "k": 7,
        "aggregation": "mean",
        "exclusion_scope": "user-only",
        "random_baseline": {"seed": 3, "trials": 11},
        "finetune": {
            "base_method": "m1",
            "label": "m1-ft",
            "tasks": [{"attribute": "artist", "kind": "classification", "weight": 2.0}],
            "learning_rate": 0.001,
            "scope": "pre_evaluation",
        },
        "output": {"text": "out/report.txt", "csv": "out/report.csv"},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    config = ExperimentConfig.from_json(path)
    assert config.methods == [MethodSpec("m1", tmp_path / "emb/m1.emb")]
    assert config.k == 7
    assert config.aggregation == "mean"
    assert config.exclusion_scope == "user-only"
    assert config.random_seed == 3 and config.random_trials == 11
    assert config.finetune.tasks == [FinetuneTask("artist", "classification", 2.0)]
    assert config.finetune.scope == "pre_evaluation"
    assert config.report_text == tmp_path / "out/report.txt"


def test_experiment_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"methods": [], "transactions": "t.csv", "bogus": 1}))
    with pytest.raises(HarnessError, match="bogus"):
        ExperimentConfig.from_json(path)


def test_experiment_config_validation(tmp_path):
    with pytest.raises(HarnessError, match="at least one method"):
        ExperimentConfig(methods=[], transactions_path=tmp_path / "t.csv")
    with pytest.raises(HarnessError, match="K must be"):
        ExperimentConfig(
            methods=[MethodSpec("m", tmp_path / "m.emb")],
            transactions_path=tmp_path / "t.csv",
            k=0,
        )
    with pytest.raises(HarnessError, match="unique"):
        ExperimentConfig(
            methods=[MethodSpec("m", tmp_path / "a.emb"), MethodSpec("m", tmp_path / "b.emb")],
            transactions_path=tmp_path / "t.csv",
        )


def test_finetune_pre_evaluation_scope_restricts_training_pool(tmp_path):
    # 12 users sell their first transactions, then u00 buys again: only the
    # items sold before that first evaluated transaction may train the head
    rng = np.random.default_rng(6)
    items = [f"i{i:03d}" for i in range(40)]
    transactions = []
    cursor = 0
    for u in range(12):
        transactions.append(Transaction(f"u{u:02d}", 0, frozenset(items[cursor : cursor + 2])))
        cursor += 2
    transactions.append(Transaction("u00", 1, frozenset(items[cursor : cursor + 1])))
    log = TransactionLog(transactions)
    pre_window = {i for t in transactions[:12] for i in t.item_ids}

    from embrec.dataset import MetadataTable
    from embrec.harness import run_finetune

    meta = MetadataTable(
        ("style",), {i: {"style": f"s{idx % 2}"} for idx, i in enumerate(items)}
    )
    base = EmbeddingMatrix.from_arrays(items, rng.normal(size=(40, 6)))
    config = ExperimentConfig(
        methods=[MethodSpec("base", tmp_path / "unused.emb")],
        transactions_path=tmp_path / "unused.csv",
        finetune=FinetuneBlock(
            base_method="base",
            tasks=[FinetuneTask("style", "classification")],
            scope="pre_evaluation",
            learning_rate=0.05,
            batch_size=8,
            max_epochs=3,
            shared_dim=8,
        ),
    )
    captured = {}
    import embrec.harness as harness_mod

    original = harness_mod.train_shallow

    def spy(model, train_x, train_targets, val_x, val_targets, cfg):
        captured["n_items"] = len(train_x) + len(val_x)
        return original(model, train_x, train_targets, val_x, val_targets, cfg)

    harness_mod.train_shallow = spy
    try:
        tuned, _ = run_finetune(config, log, base, meta)
    finally:
        harness_mod.train_shallow = original
    # train+validation come from the 24 pre-window items (70% + 20% shares)
    assert captured["n_items"] == round(len(pre_window) * 0.7) + round(len(pre_window) * 0.2)
    assert len(tuned) == 40  # the whole catalog is still re-embedded


def test_finetune_min_label_count_filters_rare_classes(tmp_path):
    rng = np.random.default_rng(8)
    items = [f"i{i:03d}" for i in range(30)]
    log = log_of([("u1", 0, {items[0]}), ("u1", 1, {items[1]})])

    from embrec.dataset import MetadataTable
    from embrec.harness import run_finetune

    labels = {i: ("common" if idx < 27 else "rare") for idx, i in enumerate(items)}
    labels[items[27]] = "alsocommon"
    labels[items[28]] = "alsocommon"
    labels[items[29]] = "alsocommon"
    meta = MetadataTable(("style",), {i: {"style": labels[i]} for i in items})
    base = EmbeddingMatrix.from_arrays(items, rng.normal(size=(30, 5)))
    config = ExperimentConfig(
        methods=[MethodSpec("base", tmp_path / "unused.emb")],
        transactions_path=tmp_path / "unused.csv",
        finetune=FinetuneBlock(
            base_method="base",
            tasks=[FinetuneTask("style", "classification")],
            min_label_count=3,
            learning_rate=0.05,
            batch_size=8,
            max_epochs=3,
            shared_dim=8,
        ),
    )
    _, result = run_finetune(config, log, base, meta)
    # the 2-class vocabulary survives; nothing references the rare class
    assert result.model.tasks[0].n_classes == 2
    assert set(result.model.tasks[0].vocab.labels) == {"common", "alsocommon"}


def test_sparse_attribute_drop_applies_before_finetune(tmp_path):
    rng = np.random.default_rng(9)
    items = [f"i{i:03d}" for i in range(12)]
    log = log_of([("u1", 0, {items[0]}), ("u1", 1, {items[1]})])

    from embrec.dataset import MetadataTable
    from embrec.harness import run_finetune

    rows = {
        i: {"style": f"s{idx % 2}", "note": ("x" if idx == 0 else None)}
        for idx, i in enumerate(items)
    }
    meta = MetadataTable(("style", "note"), rows)
    base = EmbeddingMatrix.from_arrays(items, rng.normal(size=(12, 4)))

    def config_for(attribute):
        return ExperimentConfig(
            methods=[MethodSpec("base", tmp_path / "unused.emb")],
            transactions_path=tmp_path / "unused.csv",
            sparse_attribute_min_fraction=0.5,
            finetune=FinetuneBlock(
                base_method="base",
                tasks=[FinetuneTask(attribute, "classification")],
                learning_rate=0.05,
                batch_size=4,
                max_epochs=2,
                shared_dim=4,
            ),
        )

    tuned, _ = run_finetune(config_for("style"), log, base, meta)
    assert tuned.dim == 4
    with pytest.raises(Exception, match="note"):
        run_finetune(config_for("note"), log, base, meta)


def test_report_renders_four_decimals():
    from embrec.harness import ReportRow
    from embrec.metrics import TransactionScores

    row = ReportRow(
        "method-a",
        TransactionScores(0.16321, 0.01414, 0.02351, 0.02462, 0.09794, 0.12534),
        100,
        512.25,
    )
    report = EvalReport(20, [row], skipped=3)
    text = report.render_text()
    assert "0.1632" in text
    assert "0.0141" in text
    assert "Skipped transactions (empty profile): 3" in text
    assert "F1 is computed per transaction" in text
