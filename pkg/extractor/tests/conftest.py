import os

os.environ.setdefault("TF_CPP_MIN_LOG_LEVEL", "2")

import numpy as np
import pytest
from PIL import Image

from artextract import FinetuneSpec, TaskDef, deep_fine_tune, split_items
from artextract.metadata import load_metadata

CLASS_COLORS = np.array(
    [[220, 40, 40], [40, 220, 40], [40, 40, 220], [220, 220, 40]], dtype=np.float64
)


def write_class_images(directory, n_images, seed=1, size=32):
    """Color-separable synthetic artworks: class decides the dominant hue."""
    rng = np.random.default_rng(seed)
    directory.mkdir(parents=True, exist_ok=True)
    labels = {}
    for i in range(n_images):
        cls = i % len(CLASS_COLORS)
        arr = np.clip(
            CLASS_COLORS[cls] + rng.normal(0, 30, size=(size, size, 3)), 0, 255
        ).astype(np.uint8)
        name = f"img{i:04d}"
        Image.fromarray(arr).save(directory / f"{name}.png")
        labels[name] = f"class{cls}"
    return labels


def write_metadata(path, labels, attribute="style"):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"item_id,{attribute}\n")
        for name in sorted(labels):
            fh.write(f"{name},{labels[name]}\n")


@pytest.fixture(scope="session")
def toy_finetune(tmp_path_factory):
    """One deep fine-tune over the 200-image, 4-class toy set, shared by the
    tests that inspect its outputs (training all ResNet50 weights is the
    expensive part of this suite)."""
    root = tmp_path_factory.mktemp("finetune")
    images = root / "images"
    labels = write_class_images(images, 200, seed=1)
    meta_path = root / "metadata.csv"
    write_metadata(meta_path, labels)
    _, rows = load_metadata(meta_path)
    split = split_items(sorted(rows), seed=0)
    spec = FinetuneSpec(
        model="resnet50",
        images_dir=images,
        out_path=root / "finetuned.emb",
        tasks=[TaskDef("style", "classification")],
        weights="random",
        input_size=32,
        seed=0,
        learning_rate=1e-3,
        batch_size=32,
        patience=5,
        max_epochs=10,
        history_path=root / "history.csv",
    )
    result = deep_fine_tune(spec, rows, split)
    return {"root": root, "spec": spec, "rows": rows, "split": split, "result": result}
