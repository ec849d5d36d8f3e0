"""Deterministic image loading: resize the short side, center crop."""

import logging
from pathlib import Path

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp")


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(f"image directory {directory} does not exist")
    return sorted(
        p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    )


def load_image(path, size: int) -> np.ndarray:
    """RGB array (size, size, 3) in 0..255, short side resized then cropped."""
    with Image.open(path) as img:
        img = img.convert("RGB")
        w, h = img.size
        scale = size / min(w, h)
        img = img.resize((max(size, round(w * scale)), max(size, round(h * scale))),
                         Image.BILINEAR)
        w, h = img.size
        left = (w - size) // 2
        top = (h - size) // 2
        img = img.crop((left, top, left + size, top + size))
        return np.asarray(img, dtype=np.float32)


def load_batch(paths, size: int):
    """Decode a list of files; undecodable ones are skipped with a warning.

    Returns (array of decoded images, per-path status list aligned with
    `paths`).
    """
    arrays = []
    statuses = []
    for path in paths:
        try:
            arrays.append(load_image(path, size))
            statuses.append("ok")
        except Exception as exc:
            log.warning("skipping undecodable image %s: %s", path, exc)
            statuses.append("skipped")
    stacked = np.stack(arrays) if arrays else np.zeros((0, size, size, 3), dtype=np.float32)
    return stacked, statuses
