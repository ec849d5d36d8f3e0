"""EMB1 writer: the binary interface consumed by the recommender side.

Layout (little-endian): magic "EMB1", u32 row count, u32 dim, then per
row a u16 id byte-length, the UTF-8 id, and dim float32 values. Files
are written to a temp path and renamed so readers never see a partial
export.
"""

import os
import struct
import tempfile

import numpy as np

MAGIC = b"EMB1"


def write_emb1(path, item_ids, vectors) -> None:
    vectors = np.asarray(vectors, dtype=np.float32)
    if vectors.ndim != 2 or vectors.shape[0] != len(item_ids):
        raise ValueError(f"need one row per id, got {vectors.shape} for {len(item_ids)} ids")
    if len(set(item_ids)) != len(item_ids):
        raise ValueError("duplicate item ids")
    if vectors.size and not np.isfinite(vectors).all():
        raise ValueError("non-finite embedding values")
    dim = vectors.shape[1]
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".emb1.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<II", len(item_ids), dim))
            for item_id, row in zip(item_ids, vectors):
                raw = item_id.encode("utf-8")
                if len(raw) > 0xFFFF:
                    raise ValueError(f"item id too long: {item_id!r}")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(row.astype("<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
