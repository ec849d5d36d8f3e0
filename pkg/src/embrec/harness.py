"""Experiment orchestration: chronological purchase replay and reports.

Every transaction is predicted from strictly earlier information: the
user's profile is their previous purchases, and artworks sold by anyone
before the evaluated moment are unavailable. Each user's first
transaction has no profile to score from and is skipped (and counted).

Config files are JSON; relative paths inside resolve against the config
file's directory.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import (
    MetadataTable,
    TransactionLog,
    build_vocab,
    drop_incomplete,
    drop_sparse_attributes,
    filter_rare_labels,
    load_metadata,
    load_transactions,
    split_items,
)
from .embedding_store import EmbeddingMatrix, load_embeddings, save_embeddings
from .metrics import MetricResult, TransactionScores, aggregate, mean_of_results, score_transaction
from .multitask import (
    MultitaskModel,
    TaskSpec,
    TrainConfig,
    TrainResult,
    extract_features,
    train_shallow,
    write_history_csv,
)
from .recommender import UserProfile, score_candidates, top_k


class HarnessError(ValueError):
    pass


@dataclass(frozen=True)
class TransactionTrace:
    user_id: str
    ordinal: int
    profile: tuple[str, ...]
    candidates: frozenset[str]
    relevant: frozenset[str]
    recommended: tuple[str, ...]


@dataclass
class EvalOutcome:
    """One method's replay result: metrics plus bookkeeping."""

    result: MetricResult | None
    evaluated: int
    skipped: int
    mean_candidate_size: float | None
    trace: list[TransactionTrace] | None = None


def _replay(log: TransactionLog, catalog: set[str], exclusion_scope: str):
    """Yield (transaction, profile_items, candidates) for each evaluable
    transaction, tracking the sold set chronologically."""
    if exclusion_scope not in ("global", "user-only"):
        raise HarnessError(f"unknown exclusion scope {exclusion_scope!r}")
    missing = log.item_ids - catalog
    if missing:
        raise HarnessError(f"catalog is missing transacted items, e.g. {sorted(missing)[:5]}")
    sold: set[str] = set()
    profiles: dict[str, list[str]] = {}
    for t in log.transactions:
        profile = profiles.setdefault(t.user_id, [])
        if profile:
            excluded = sold if exclusion_scope == "global" else set(profile)
            yield t, tuple(profile), catalog - excluded
        profile.extend(sorted(t.item_ids))
        sold |= t.item_ids


def replay_evaluate(
    log: TransactionLog,
    embeddings: EmbeddingMatrix,
    k: int = 20,
    aggregation: str = "max",
    exclusion_scope: str = "global",
    collect_trace: bool = False,
) -> EvalOutcome:
    """Score one embedding over the whole log and macro-average the metrics."""
    catalog = set(embeddings.item_ids)
    scores: list[TransactionScores] = []
    trace: list[TransactionTrace] = [] if collect_trace else None
    evaluated = 0
    candidate_sizes = 0
    for t, profile_items, candidates in _replay(log, catalog, exclusion_scope):
        profile = UserProfile(t.user_id, profile_items)
        ranked = top_k(score_candidates(profile, candidates, embeddings, aggregation), k)
        scores.append(score_transaction(ranked, set(t.item_ids), k))
        evaluated += 1
        candidate_sizes += len(candidates)
        if collect_trace:
            trace.append(
                TransactionTrace(
                    t.user_id,
                    t.ordinal,
                    profile_items,
                    frozenset(candidates),
                    frozenset(t.item_ids),
                    tuple(ranked.ids),
                )
            )
    skipped = len(log.transactions) - evaluated
    if evaluated == 0:
        return EvalOutcome(None, 0, skipped, None, trace)
    return EvalOutcome(
        aggregate(scores, k),
        evaluated,
        skipped,
        candidate_sizes / evaluated,
        trace,
    )


def random_baseline(
    log: TransactionLog,
    catalog: set[str],
    k: int = 20,
    seed: int = 0,
    trials: int = 100,
    exclusion_scope: str = "global",
) -> EvalOutcome:
    """Uniform draws without replacement from the same candidate sets the
    real methods see, averaged over trials."""
    if trials < 1:
        raise HarnessError(f"trials must be >= 1, got {trials}")
    replayed = [
        (t, sorted(candidates)) for t, _, candidates in _replay(log, catalog, exclusion_scope)
    ]
    skipped = len(log.transactions) - len(replayed)
    if not replayed:
        return EvalOutcome(None, 0, skipped, None)
    rng = np.random.default_rng(seed)
    per_trial: list[MetricResult] = []
    for _ in range(trials):
        scores = []
        for t, candidates in replayed:
            n_draw = min(k, len(candidates))
            picks = rng.choice(len(candidates), size=n_draw, replace=False)
            drawn = [candidates[i] for i in picks]
            scores.append(score_transaction(drawn, set(t.item_ids), k))
        per_trial.append(aggregate(scores, k))
    mean_size = sum(len(c) for _, c in replayed) / len(replayed)
    return EvalOutcome(mean_of_results(per_trial), len(replayed), skipped, mean_size)


@dataclass(frozen=True)
class MethodSpec:
    label: str
    path: Path


@dataclass(frozen=True)
class FinetuneTask:
    attribute: str
    kind: str
    weight: float = 1.0


@dataclass
class FinetuneBlock:
    base_method: str
    tasks: list[FinetuneTask]
    label: str = "fine-tuned"
    learning_rate: float = 0.001
    batch_size: int = 128
    patience: int = 5
    max_epochs: int = 100
    shared_dim: int = 1024
    seed: int = 0
    scope: str = "catalog"  # or "pre_evaluation"
    split_seed: int = 0
    split_proportions: tuple[float, float, float] = (0.7, 0.2, 0.1)
    min_label_count: int | None = None  # Omniart-style rare-label filtering
    export_path: Path | None = None
    history_path: Path | None = None

    def __post_init__(self):
        if not self.tasks:
            raise HarnessError("fine-tune block needs at least one task")
        if self.scope not in ("catalog", "pre_evaluation"):
            raise HarnessError(f"unknown fine-tune scope {self.scope!r}")


@dataclass
class ExperimentConfig:
    methods: list[MethodSpec]
    transactions_path: Path
    metadata_path: Path | None = None
    k: int = 20
    aggregation: str = "max"
    exclusion_scope: str = "global"
    random_seed: int = 0
    random_trials: int = 100
    finetune: FinetuneBlock | None = None
    report_text: Path = Path("report.txt")
    report_csv: Path = Path("report.csv")
    sparse_attribute_min_fraction: float | None = None

    def __post_init__(self):
        if not self.methods:
            raise HarnessError("config needs at least one method")
        if len({m.label for m in self.methods}) != len(self.methods):
            raise HarnessError("method labels must be unique")
        if self.k < 1:
            raise HarnessError(f"K must be >= 1, got {self.k}")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        base = path.parent

        def resolve(p):
            p = Path(p)
            return p if p.is_absolute() else base / p

        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {
            "methods", "transactions", "metadata", "k", "aggregation",
            "exclusion_scope", "random_baseline", "finetune", "output",
            "sparse_attribute_min_fraction",
        }
        unknown = set(raw) - known
        if unknown:
            raise HarnessError(f"{path}: unknown config keys {sorted(unknown)}")
        try:
            methods = [MethodSpec(m["label"], resolve(m["path"])) for m in raw["methods"]]
            transactions = resolve(raw["transactions"])
        except KeyError as exc:
            raise HarnessError(f"{path}: missing required key {exc}") from None
        rb = raw.get("random_baseline", {})
        out = raw.get("output", {})
        ft = None
        if "finetune" in raw:
            f = dict(raw["finetune"])
            tasks = [
                FinetuneTask(t["attribute"], t["kind"], float(t.get("weight", 1.0)))
                for t in f.pop("tasks")
            ]
            for key in ("export_path", "history_path"):
                if key in f:
                    f[key] = resolve(f[key])
            if "split_proportions" in f:
                f["split_proportions"] = tuple(f["split_proportions"])
            ft = FinetuneBlock(base_method=f.pop("base_method"), tasks=tasks, **f)
        return cls(
            methods=methods,
            transactions_path=transactions,
            metadata_path=resolve(raw["metadata"]) if "metadata" in raw else None,
            k=int(raw.get("k", 20)),
            aggregation=raw.get("aggregation", "max"),
            exclusion_scope=raw.get("exclusion_scope", "global"),
            random_seed=int(rb.get("seed", 0)),
            random_trials=int(rb.get("trials", 100)),
            finetune=ft,
            report_text=resolve(out.get("text", "report.txt")),
            report_csv=resolve(out.get("csv", "report.csv")),
            sparse_attribute_min_fraction=raw.get("sparse_attribute_min_fraction"),
        )


@dataclass(frozen=True)
class ReportRow:
    label: str
    scores: TransactionScores | None
    evaluated: int
    mean_candidate_size: float | None


@dataclass
class EvalReport:
    k: int
    rows: list[ReportRow]
    skipped: int
    notes: list[str] = field(default_factory=list)

    COLUMNS = ("R", "P", "F1", "MAP", "MRR", "nDCG")

    def render_text(self) -> str:
        headers = ["Method"] + [f"{c}@{self.k}" for c in self.COLUMNS] + [
            "Transactions",
            "MeanCandidates",
        ]
        table = []
        for row in self.rows:
            if row.scores is None:
                cells = ["n/a"] * 6 + [str(row.evaluated), "n/a"]
            else:
                cells = [f"{v:.4f}" for v in row.scores.as_tuple()]
                cells += [str(row.evaluated), f"{row.mean_candidate_size:.1f}"]
            table.append([row.label] + cells)
        widths = [
            max(len(headers[i]), *(len(r[i]) for r in table)) if table else len(headers[i])
            for i in range(len(headers))
        ]
        lines = [
            "  ".join(h.ljust(widths[i]) if i == 0 else h.rjust(widths[i])
                      for i, h in enumerate(headers)),
            "  ".join("-" * w for w in widths),
        ]
        for r in table:
            lines.append(
                "  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i])
                          for i, c in enumerate(r))
            )
        lines.append("")
        lines.append(f"Skipped transactions (empty profile): {self.skipped}")
        lines.append("F1 is computed per transaction and then averaged, not from averaged P/R.")
        for note in self.notes:
            lines.append(note)
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["method", "recall", "precision", "f1", "map", "mrr", "ndcg",
                 "evaluated_transactions", "mean_candidate_size", "k"]
            )
            for row in self.rows:
                if row.scores is None:
                    writer.writerow([row.label] + [""] * 6 + [row.evaluated, "", self.k])
                else:
                    writer.writerow(
                        [row.label]
                        + [repr(v) for v in row.scores.as_tuple()]
                        + [row.evaluated, repr(row.mean_candidate_size), self.k]
                    )


def _first_evaluated_index(log: TransactionLog) -> int | None:
    seen_users: set[str] = set()
    for i, t in enumerate(log.transactions):
        if t.user_id in seen_users:
            return i
        seen_users.add(t.user_id)
    return None


def run_finetune(
    config: ExperimentConfig,
    log: TransactionLog,
    base: EmbeddingMatrix,
    metadata: MetadataTable,
) -> tuple[EmbeddingMatrix, TrainResult]:
    """Shallow fine-tune on metadata tasks, then re-embed the whole catalog."""
    ft = config.finetune
    if config.sparse_attribute_min_fraction is not None:
        metadata = drop_sparse_attributes(metadata, config.sparse_attribute_min_fraction)
    pool = [item for item in base.item_ids if item in metadata.rows]
    if ft.scope == "pre_evaluation":
        cut = _first_evaluated_index(log)
        sold_before: set[str] = set()
        for t in log.transactions[: cut if cut is not None else 0]:
            sold_before |= t.item_ids
        pool = [item for item in pool if item in sold_before]
    attributes = [t.attribute for t in ft.tasks]
    # cleaning order: sparse attributes dropped above, then incomplete rows,
    # then rare labels per classification attribute
    table = MetadataTable(metadata.attributes, {i: metadata.rows[i] for i in pool})
    table = drop_incomplete(table, attributes)
    if ft.min_label_count is not None:
        for t in ft.tasks:
            if t.kind == "classification":
                table = filter_rare_labels(table, t.attribute, ft.min_label_count)
    usable = [item for item in pool if item in table.rows]
    if len(usable) < 3:
        raise HarnessError(
            f"fine-tune scope {ft.scope!r} leaves only {len(usable)} labeled items"
        )
    split = split_items(usable, ft.split_proportions, ft.split_seed)

    tasks: list[TaskSpec] = []
    target_maps = []
    for t in ft.tasks:
        if t.kind == "classification":
            vocab = build_vocab(table, t.attribute)
            tasks.append(
                TaskSpec(t.attribute, "classification", n_classes=len(vocab),
                         weight=t.weight, vocab=vocab)
            )
            target_maps.append(lambda item, a=t.attribute, v=vocab: v.index(table.rows[item][a]))
        elif t.kind == "regression":
            values = {item: table.rows[item][t.attribute] for item in usable}
            bad = [i for i, v in values.items() if not isinstance(v, (int, float))]
            if bad:
                raise HarnessError(
                    f"regression attribute {t.attribute!r} has non-numeric values, e.g. {bad[:3]}"
                )
            train_vals = np.array([values[i] for i in split.train], dtype=np.float64)
            mean = float(train_vals.mean())
            std = float(train_vals.std())
            if std == 0.0:
                std = 1.0
            tasks.append(TaskSpec(t.attribute, "regression", weight=t.weight))
            # zero mean / unit variance on the training split keeps MAE on a
            # scale comparable with the cross-entropy tasks
            target_maps.append(lambda item, vv=values, m=mean, s=std: (vv[item] - m) / s)
        else:
            raise HarnessError(f"unknown task kind {t.kind!r} for {t.attribute!r}")

    def features_of(items):
        return np.stack([base.vector(i) for i in items])

    def targets_of(items):
        return [np.array([mapper(i) for i in items]) for mapper in target_maps]

    model = MultitaskModel.init(base.dim, tasks, shared_dim=ft.shared_dim, seed=ft.seed)
    train_cfg = TrainConfig(
        learning_rate=ft.learning_rate,
        batch_size=ft.batch_size,
        patience=ft.patience,
        max_epochs=ft.max_epochs,
        seed=ft.seed,
    )
    result = train_shallow(
        model,
        features_of(split.train),
        targets_of(split.train),
        features_of(split.validation),
        targets_of(split.validation),
        train_cfg,
    )
    shared = extract_features(result.model, base.vectors)
    tuned = EmbeddingMatrix.from_arrays(base.item_ids, shared, dim=ft.shared_dim)
    if ft.export_path is not None:
        save_embeddings(tuned, ft.export_path)
    if ft.history_path is not None:
        write_history_csv(result.history, ft.history_path)
    return tuned, result


def run_experiment(config: ExperimentConfig) -> EvalReport:
    """Evaluate every configured method plus the random baseline and write
    the text and CSV reports."""
    log = load_transactions(config.transactions_path)
    matrices: list[tuple[str, EmbeddingMatrix]] = []
    for method in config.methods:
        try:
            matrices.append((method.label, load_embeddings(method.path)))
        except Exception as exc:
            raise HarnessError(f"method {method.label!r}: {exc}") from exc
    catalog = set(matrices[0][1].item_ids)
    for label, m in matrices[1:]:
        if set(m.item_ids) != catalog:
            raise HarnessError(
                f"method {label!r} embeds a different catalog than "
                f"{matrices[0][0]!r}; candidate sets would not be comparable"
            )

    notes: list[str] = []
    if config.finetune is not None:
        if config.metadata_path is None:
            raise HarnessError("fine-tune block requires a metadata path")
        metadata = load_metadata(config.metadata_path)
        base_label = config.finetune.base_method
        base = dict(matrices).get(base_label)
        if base is None:
            raise HarnessError(f"fine-tune base method {base_label!r} is not a configured method")
        try:
            tuned, train_result = run_finetune(config, log, base, metadata)
        except Exception as exc:
            raise HarnessError(f"method {config.finetune.label!r}: {exc}") from exc
        matrices.append((config.finetune.label, tuned))
        notes.append(
            f"Fine-tuned {base_label!r} on "
            f"{', '.join(t.attribute for t in config.finetune.tasks)}; "
            f"best epoch {train_result.best_epoch} "
            f"(val loss {train_result.best_val_loss:.6f})."
        )

    rows: list[ReportRow] = []
    skipped = None
    for label, m in matrices:
        try:
            outcome = replay_evaluate(
                log, m, config.k, config.aggregation, config.exclusion_scope
            )
        except Exception as exc:
            raise HarnessError(f"method {label!r}: {exc}") from exc
        rows.append(_row(label, outcome))
        skipped = outcome.skipped
    baseline = random_baseline(
        log, catalog, config.k, config.random_seed, config.random_trials,
        config.exclusion_scope,
    )
    rows.append(_row("Random", baseline))
    if baseline.evaluated == 0:
        notes.append("No transaction could be evaluated: every user has a single transaction.")
    report = EvalReport(config.k, rows, skipped if skipped is not None else baseline.skipped, notes)
    config.report_text.parent.mkdir(parents=True, exist_ok=True)
    config.report_csv.parent.mkdir(parents=True, exist_ok=True)
    config.report_text.write_text(report.render_text(), encoding="utf-8")
    report.write_csv(config.report_csv)
    return report


def _row(label: str, outcome: EvalOutcome) -> ReportRow:
    scores = None
    if outcome.result is not None:
        r = outcome.result
        scores = TransactionScores(r.recall, r.precision, r.f1, r.map, r.mrr, r.ndcg)
    return ReportRow(label, scores, outcome.evaluated, outcome.mean_candidate_size)
