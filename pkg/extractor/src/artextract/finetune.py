"""Deep fine-tuning: update every backbone weight, then export the shared
representation layer as the recommendation embedding.

The trainable head mirrors the shallow setup on the recommender side: a
1024-unit rectified shared layer feeding one output per task, trained
with Adam under a weighted sum of cross-entropy (classification) and MAE
(regression) losses, with patience-based early stopping on the
validation loss and best-epoch weight restoration.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .emb1 import write_emb1
from .images import list_images, load_batch
from .models import SHARED_DIM, build_base, preprocess_fn

PREDICT_BATCH = 32


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskDef:
    attribute: str
    kind: str  # "classification" | "regression"
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"task {self.attribute!r}: unknown kind {self.kind!r}")
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise ValueError(f"task {self.attribute!r}: weight must be finite and > 0")


@dataclass(frozen=True)
class ItemSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]
    seed: int


def split_items(items, seed: int = 0,
                proportions=(0.7, 0.2, 0.1)) -> ItemSplit:
    """70/20/10 split: rounded train and validation shares, rest in test."""
    if len(items) < 3:
        raise ValueError(f"need at least 3 items to split, got {len(items)}")
    n = len(items)
    n_train = math.floor(n * proportions[0] + 0.5)
    n_val = math.floor(n * proportions[1] + 0.5)
    rng = np.random.default_rng(seed)
    shuffled = [items[i] for i in rng.permutation(n)]
    return ItemSplit(
        tuple(shuffled[:n_train]),
        tuple(shuffled[n_train : n_train + n_val]),
        tuple(shuffled[n_train + n_val :]),
        seed,
    )


@dataclass
class FinetuneSpec:
    model: str
    images_dir: Path
    out_path: Path
    tasks: list[TaskDef]
    weights: str = "imagenet"
    input_size: int | None = None
    seed: int = 0
    learning_rate: float = 0.0001
    batch_size: int = 32
    patience: int = 5
    max_epochs: int = 50
    manifest_path: Path | None = None
    history_path: Path | None = None

    def __post_init__(self):
        from .models import model_entry

        model_entry(self.model)
        if not self.tasks:
            raise ValueError("deep fine-tuning needs at least one task")
        if self.manifest_path is None:
            self.manifest_path = Path(f"{self.out_path}.manifest.csv")


@dataclass
class FinetuneResult:
    out_path: Path
    item_ids: list[str]
    dim: int
    history: list[dict]
    stopped_epoch: int
    task_model: "object" = field(repr=False, default=None)
    train_ids: tuple[str, ...] = ()


def _build_targets(tasks, rows, split):
    """Per-task target arrays for the train and validation items.

    Classification labels are indexed lexicographically; regression
    targets are standardized on the training split.
    """
    vocabularies = {}
    scalers = {}
    for task in tasks:
        labeled = [rows[i].get(task.attribute) for i in split.train + split.validation]
        missing = [i for i, v in zip(split.train + split.validation, labeled) if v is None]
        if missing:
            raise ValueError(
                f"task {task.attribute!r}: items without labels, e.g. {missing[:5]}"
            )
        if task.kind == "classification":
            vocabularies[task.attribute] = sorted({str(v) for v in labeled})
        else:
            bad = [v for v in labeled if not isinstance(v, float)]
            if bad:
                raise ValueError(f"task {task.attribute!r}: non-numeric targets, e.g. {bad[:3]}")
            train_vals = np.array([rows[i][task.attribute] for i in split.train])
            std = float(train_vals.std()) or 1.0
            scalers[task.attribute] = (float(train_vals.mean()), std)

    def targets_for(items):
        out = []
        for task in tasks:
            if task.kind == "classification":
                vocab = vocabularies[task.attribute]
                index = {label: i for i, label in enumerate(vocab)}
                try:
                    out.append(np.array([index[str(rows[i][task.attribute])] for i in items]))
                except KeyError as exc:
                    raise ValueError(
                        f"task {task.attribute!r}: label {exc} outside the training vocabulary"
                    ) from None
            else:
                mean, std = scalers[task.attribute]
                out.append(
                    np.array([(rows[i][task.attribute] - mean) / std for i in items],
                             dtype=np.float32)
                )
        return out

    return targets_for, vocabularies


def deep_fine_tune(spec: FinetuneSpec, metadata_rows: dict[str, dict],
                   split: ItemSplit) -> FinetuneResult:
    """Train every layer on the labeled split, then embed all images."""
    import tensorflow as tf

    paths = list_images(spec.images_dir)
    by_stem = {p.stem: p for p in paths}
    for item in split.train + split.validation:
        if item not in by_stem:
            raise ValueError(f"split item {item!r} has no image in {spec.images_dir}")

    tf.keras.utils.set_random_seed(spec.seed)
    base, entry = build_base(spec.model, spec.weights, spec.input_size, spec.seed)
    base.trainable = True  # deep tuning: the whole backbone updates
    size = spec.input_size or entry.canonical_size
    preprocess = preprocess_fn(entry)

    pooled = base.output
    if len(pooled.shape) == 4:
        pooled = tf.keras.layers.GlobalAveragePooling2D(name="backbone_pool")(pooled)
    shared = tf.keras.layers.Dense(SHARED_DIM, activation="relu",
                                   name="shared_representation")(pooled)
    # losses, weights and targets stay positional, aligned with spec.tasks
    outputs = []
    losses = []
    loss_weights = []
    targets_for, vocabularies = _build_targets(spec.tasks, metadata_rows, split)
    for task in spec.tasks:
        if task.kind == "classification":
            n_classes = len(vocabularies[task.attribute])
            if n_classes < 2:
                raise ValueError(f"task {task.attribute!r}: needs >= 2 classes")
            outputs.append(
                tf.keras.layers.Dense(n_classes, activation="softmax",
                                      name=task.attribute)(shared)
            )
            losses.append("sparse_categorical_crossentropy")
        else:
            outputs.append(tf.keras.layers.Dense(1, name=task.attribute)(shared))
            losses.append("mae")
        loss_weights.append(task.weight)
    task_model = tf.keras.Model(base.input, outputs)
    task_model.compile(
        optimizer=tf.keras.optimizers.Adam(spec.learning_rate),
        loss=losses,
        loss_weights=loss_weights,
    )

    def load_split(items):
        batch, statuses = load_batch([by_stem[i] for i in items], size)
        bad = [i for i, s in zip(items, statuses) if s != "ok"]
        if bad:
            raise ValueError(f"undecodable training images: {bad[:5]}")
        return preprocess(batch)

    train_x = load_split(split.train)
    val_x = load_split(split.validation)

    class AbortOnNaN(tf.keras.callbacks.Callback):
        def on_epoch_end(self, epoch, logs=None):
            loss = (logs or {}).get("loss")
            if loss is None or not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch + 1}")

    stopper = tf.keras.callbacks.EarlyStopping(
        monitor="val_loss", patience=spec.patience, restore_best_weights=True
    )
    history = task_model.fit(
        train_x,
        targets_for(split.train),
        validation_data=(val_x, targets_for(split.validation)),
        batch_size=spec.batch_size,
        epochs=spec.max_epochs,
        callbacks=[stopper, AbortOnNaN()],
        verbose=0,
        shuffle=True,
    )
    if spec.history_path is not None:
        _write_history(spec.history_path, history.history)

    # embed the whole directory with the tuned shared layer
    extractor = tf.keras.Model(task_model.input,
                               task_model.get_layer("shared_representation").output)
    ids: list[str] = []
    rows: list[np.ndarray] = []
    manifest: list[tuple[str, str, str]] = []
    for start in range(0, len(paths), PREDICT_BATCH):
        chunk = paths[start : start + PREDICT_BATCH]
        batch, statuses = load_batch(chunk, size)
        if len(batch):
            feats = iter(extractor.predict(preprocess(batch), verbose=0))
        for path, status in zip(chunk, statuses):
            manifest.append((path.name, path.stem, status))
            if status == "ok":
                ids.append(path.stem)
                rows.append(np.asarray(next(feats), dtype=np.float32))
    vectors = np.stack(rows)
    write_emb1(spec.out_path, ids, vectors)
    with open(spec.manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "item_id", "status"])
        writer.writerows(manifest)
    epochs_run = len(history.history.get("loss", []))
    history_rows = [
        {key: values[i] for key, values in history.history.items()}
        for i in range(epochs_run)
    ]
    return FinetuneResult(
        out_path=Path(spec.out_path),
        item_ids=ids,
        dim=vectors.shape[1],
        history=history_rows,
        stopped_epoch=epochs_run,
        task_model=task_model,
        train_ids=split.train,
    )


def _write_history(path, history: dict) -> None:
    keys = sorted(history)
    epochs = len(history[keys[0]]) if keys else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", *keys])
        for i in range(epochs):
            writer.writerow([i + 1, *(history[key][i] for key in keys)])
