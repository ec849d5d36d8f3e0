"""Dense per-item embedding matrices and the EMB1 on-disk format.

EMB1 layout (little-endian, no padding, no compression):

    magic  b"EMB1"
    u32    row count
    u32    dim
    rows   u16 id byte-length, UTF-8 id bytes, dim x float32

A plain-text fallback is accepted when the magic bytes are absent: a header
line ``id,dim=<d>`` followed by one CSV row per item (``id,v1,...,vd``).

Vectors are held in float64 in memory regardless of the 32-bit carrier;
metric and gradient tests downstream need the headroom.
"""

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"EMB1"

_HEADER = struct.Struct("<4sII")
_IDLEN = struct.Struct("<H")


class EmbeddingFormatError(ValueError):
    """Malformed EMB1 payload. `offset` is the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class EmbeddingMatrix:
    """Item-id-indexed dense vector store with cached row norms."""

    item_ids: tuple[str, ...]
    dim: int
    vectors: np.ndarray  # (n, dim) float64, row-major
    norms: np.ndarray = field(default=None)  # type: ignore[assignment]
    _index: dict[str, int] = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.shape != (len(self.item_ids), self.dim):
            raise ValueError(
                f"vector array shape {self.vectors.shape} does not match "
                f"{len(self.item_ids)} ids of dim {self.dim}"
            )
        if self.vectors.size and not np.isfinite(self.vectors).all():
            raise ValueError("embedding vectors contain non-finite values")
        self._index = {}
        for i, item_id in enumerate(self.item_ids):
            if item_id in self._index:
                raise ValueError(f"duplicate item id {item_id!r}")
            self._index[item_id] = i
        if self.norms is None:
            self.norms = np.linalg.norm(self.vectors, axis=1)
        self.vectors.setflags(write=False)
        self.norms.setflags(write=False)

    @classmethod
    def from_arrays(cls, item_ids, vectors, dim: int | None = None) -> "EmbeddingMatrix":
        vectors = np.asarray(vectors, dtype=np.float64)
        if vectors.ndim != 2:
            vectors = vectors.reshape(len(item_ids), -1 if len(item_ids) else (dim or 0))
        if dim is None:
            dim = vectors.shape[1]
        return cls(tuple(item_ids), dim, vectors)

    def __len__(self) -> int:
        return len(self.item_ids)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._index

    def row(self, item_id: str) -> int:
        try:
            return self._index[item_id]
        except KeyError:
            raise KeyError(f"unknown item id {item_id!r}") from None

    def vector(self, item_id: str) -> np.ndarray:
        return self.vectors[self.row(item_id)]


def cosine_similarity(m: EmbeddingMatrix, id_a: str, id_b: str) -> float:
    """Cosine of the angle between two item vectors, in [-1, 1]."""
    ia, ib = m.row(id_a), m.row(id_b)
    na, nb = m.norms[ia], m.norms[ib]
    if na == 0.0 or nb == 0.0:
        raise ValueError(f"zero-norm embedding for {id_a if na == 0.0 else id_b!r}")
    return float(np.dot(m.vectors[ia], m.vectors[ib]) / (na * nb))


def save_embeddings(m: EmbeddingMatrix, path) -> None:
    """Write EMB1. Float64 vectors are narrowed to the format's float32."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, len(m.item_ids), m.dim))
        for i, item_id in enumerate(m.item_ids):
            raw = item_id.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise ValueError(f"item id too long for EMB1 ({len(raw)} bytes)")
            fh.write(_IDLEN.pack(len(raw)))
            fh.write(raw)
            fh.write(m.vectors[i].astype("<f4").tobytes())


def load_embeddings(path) -> EmbeddingMatrix:
    """Load an EMB1 file (or its text fallback) into an EmbeddingMatrix.

    Rejects duplicate ids, non-finite values, truncated payloads and
    zero-norm rows; a zero row would make cosine similarity undefined.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] == MAGIC:
        return _parse_binary(data)
    return _parse_text(data, path)


def _parse_binary(data: bytes) -> EmbeddingMatrix:
    if len(data) < _HEADER.size:
        raise EmbeddingFormatError("truncated header", len(data))
    _, n_rows, dim = _HEADER.unpack_from(data, 0)
    if dim == 0:
        raise EmbeddingFormatError("dim must be positive", 4)
    offset = _HEADER.size
    ids: list[str] = []
    seen: set[str] = set()
    rows = np.empty((n_rows, dim), dtype=np.float64)
    row_bytes = 4 * dim
    for i in range(n_rows):
        if offset + _IDLEN.size > len(data):
            raise EmbeddingFormatError(
                f"declared {n_rows} rows but payload ends at row {i}", offset
            )
        (id_len,) = _IDLEN.unpack_from(data, offset)
        offset += _IDLEN.size
        if offset + id_len + row_bytes > len(data):
            raise EmbeddingFormatError(
                f"declared {n_rows} rows but payload ends at row {i}", offset
            )
        try:
            item_id = data[offset : offset + id_len].decode("utf-8")
        except UnicodeDecodeError:
            raise EmbeddingFormatError(f"row {i} id is not valid UTF-8", offset) from None
        if item_id in seen:
            raise EmbeddingFormatError(f"duplicate item id {item_id!r}", offset)
        seen.add(item_id)
        ids.append(item_id)
        offset += id_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
        if not np.isfinite(vec).all():
            raise EmbeddingFormatError(f"non-finite value in row for {item_id!r}", offset)
        rows[i] = vec
        offset += row_bytes
    if offset != len(data):
        raise EmbeddingFormatError(
            f"{len(data) - offset} trailing bytes after declared {n_rows} rows", offset
        )
    return _finish(ids, dim, rows)


def _parse_text(data: bytes, path) -> EmbeddingMatrix:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EmbeddingFormatError("malformed header: neither EMB1 nor text", exc.start) from None
    lines = text.splitlines()
    if not lines or not lines[0].startswith("id,dim="):
        raise EmbeddingFormatError("malformed header: neither EMB1 nor 'id,dim=<d>'", 0)
    try:
        dim = int(lines[0][len("id,dim="):])
    except ValueError:
        raise EmbeddingFormatError(f"bad dim in header {lines[0]!r}", 0) from None
    if dim <= 0:
        raise EmbeddingFormatError("dim must be positive", 0)
    ids: list[str] = []
    seen: set[str] = set()
    rows: list[list[float]] = []
    for lineno, row in enumerate(csv.reader(lines[1:]), start=2):
        if not row:
            continue
        if len(row) != dim + 1:
            raise ValueError(f"{path}:{lineno}: expected id plus {dim} values, got {len(row)} fields")
        item_id = row[0]
        if item_id in seen:
            raise ValueError(f"{path}:{lineno}: duplicate item id {item_id!r}")
        seen.add(item_id)
        ids.append(item_id)
        try:
            values = [float(v) for v in row[1:]]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric embedding value") from None
        if not all(math.isfinite(v) for v in values):
            raise ValueError(f"{path}:{lineno}: non-finite embedding value")
        rows.append(values)
    vectors = np.array(rows, dtype=np.float64).reshape(len(ids), dim)
    return _finish(ids, dim, vectors)


def _finish(ids: list[str], dim: int, vectors: np.ndarray) -> EmbeddingMatrix:
    m = EmbeddingMatrix(tuple(ids), dim, vectors)
    zero = np.flatnonzero(m.norms == 0.0)
    if zero.size:
        raise ValueError(
            f"zero-norm embedding rows for ids {[ids[i] for i in zero[:5]]}"
            f"{' ...' if zero.size > 5 else ''}"
        )
    return m
