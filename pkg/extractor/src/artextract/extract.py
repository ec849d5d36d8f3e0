"""Batch feature extraction from a directory of images to an EMB1 file."""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .emb1 import write_emb1
from .images import list_images, load_batch
from .models import build_base, feature_output, preprocess_fn

BATCH_SIZE = 32


@dataclass
class ExtractorSpec:
    model: str
    images_dir: Path
    out_path: Path
    layer: str = "pool"
    weights: str = "imagenet"
    input_size: int | None = None
    seed: int = 0
    manifest_path: Path | None = None

    def __post_init__(self):
        from .models import model_entry

        model_entry(self.model)  # validates the name eagerly
        if self.manifest_path is None:
            self.manifest_path = Path(f"{self.out_path}.manifest.csv")


@dataclass
class ExtractResult:
    out_path: Path
    manifest_path: Path
    item_ids: list[str]
    dim: int
    skipped: list[str]


def extract(spec: ExtractorSpec) -> ExtractResult:
    """Embed every decodable image; ids are the filename stems."""
    import tensorflow as tf

    paths = list_images(spec.images_dir)
    if not paths:
        raise ValueError(f"no images found in {spec.images_dir}")
    stems = [p.stem for p in paths]
    dupes = {s for s in stems if stems.count(s) > 1}
    if dupes:
        raise ValueError(f"duplicate item ids from filename stems: {sorted(dupes)[:5]}")

    base, entry = build_base(spec.model, spec.weights, spec.input_size, spec.seed)
    model = tf.keras.Model(base.input, feature_output(base, spec.layer))
    preprocess = preprocess_fn(entry)
    size = spec.input_size or entry.canonical_size

    ids: list[str] = []
    rows: list[np.ndarray] = []
    statuses: list[tuple[str, str, str]] = []  # (filename, item_id, status)
    for start in range(0, len(paths), BATCH_SIZE):
        chunk = paths[start : start + BATCH_SIZE]
        batch, batch_status = load_batch(chunk, size)
        if len(batch):
            feats = model.predict(preprocess(batch.copy()), verbose=0)
            decoded = iter(np.asarray(feats, dtype=np.float32))
        for path, status in zip(chunk, batch_status):
            statuses.append((path.name, path.stem, status))
            if status == "ok":
                ids.append(path.stem)
                rows.append(next(decoded))

    if not ids:
        raise ValueError(f"every image in {spec.images_dir} failed to decode")
    vectors = np.stack(rows)
    write_emb1(spec.out_path, ids, vectors)
    with open(spec.manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "item_id", "status"])
        writer.writerows(statuses)
    return ExtractResult(
        out_path=Path(spec.out_path),
        manifest_path=Path(spec.manifest_path),
        item_ids=ids,
        dim=vectors.shape[1],
        skipped=[f for f, _, s in statuses if s == "skipped"],
    )
