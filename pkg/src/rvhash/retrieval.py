"""Binarization, bit-packed codes, and exhaustive Hamming ranking.

Packing convention: bit j of an L-bit code lives in word j // 64 at bit
position j % 64 (little-endian within the word); unused high bits of the
last word are always zero. Hamming distance is XOR + popcount per word.

Code file format (RVHC, little-endian):
magic "RVHC", u32 version, u32 L, u64 count, then per record:
u64 id, u32 label, ceil(L/64) x u64 words.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError

WORD_BITS = 64
RVHC_MAGIC = b"RVHC"
RVHC_VERSION = 1

try:
    _popcount = np.bitwise_count
except AttributeError:  # numpy < 2.0
    _TABLE = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint8)

    def _popcount(words):
        return _TABLE[words.view(np.uint8)].reshape(*words.shape, 8).sum(axis=-1, dtype=np.uint64)


def words_per_code(length: int) -> int:
    return (length + WORD_BITS - 1) // WORD_BITS


def _padding_mask(length: int) -> np.ndarray:
    """Per-word mask of the valid (non-padding) bits."""
    w = words_per_code(length)
    mask = np.full(w, np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    tail = length % WORD_BITS
    if tail:
        mask[-1] = np.uint64((1 << tail) - 1)
    return mask


def _check_padding(words: np.ndarray, length: int, what: str) -> None:
    mask = _padding_mask(length)
    if np.any(words & ~mask):
        raise DataError(f"{what}: padding bits beyond length {length} are not zero")


@dataclass(frozen=True)
class HashCode:
    length: int
    words: np.ndarray  # (ceil(L/64),) uint64

    def __post_init__(self):
        if self.length < 1:
            raise ShapeError(f"code length must be >= 1, got {self.length}")
        w = np.ascontiguousarray(self.words, dtype=np.uint64)
        if w.shape != (words_per_code(self.length),):
            raise ShapeError(
                f"code of length {self.length} needs {words_per_code(self.length)} words, "
                f"got shape {self.words.shape}"
            )
        _check_padding(w[None, :], self.length, "HashCode")
        object.__setattr__(self, "words", w)

    def bits(self) -> np.ndarray:
        return unpack_bits(self.words[None, :], self.length)[0]


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack (n, L) 0/1 values into (n, ceil(L/64)) uint64 words."""
    bits = np.asarray(bits)
    if bits.ndim != 2:
        raise ShapeError(f"pack_bits expects (n, L), got {bits.shape}")
    n, length = bits.shape
    w = words_per_code(length)
    padded = np.zeros((n, w * WORD_BITS), dtype=np.uint8)
    padded[:, :length] = bits != 0
    packed = np.packbits(padded, axis=1, bitorder="little")
    return np.frombuffer(packed.tobytes(), dtype="<u8").reshape(n, w).astype(np.uint64)


def unpack_bits(words: np.ndarray, length: int) -> np.ndarray:
    """Inverse of pack_bits: (n, W) words -> (n, L) uint8 bits."""
    words = np.ascontiguousarray(words, dtype="<u8")
    n = words.shape[0]
    raw = np.frombuffer(words.tobytes(), dtype=np.uint8).reshape(n, -1)
    bits = np.unpackbits(raw, axis=1, bitorder="little")
    return bits[:, :length]


def binarize(h_hat: np.ndarray) -> HashCode:
    """Threshold continuous hash activations at 0.5 (0.5 itself maps to 1)."""
    h = np.asarray(h_hat)
    if h.ndim != 1:
        raise ShapeError(f"binarize expects a single (L,) vector, got {h.shape}")
    words = pack_bits((h >= 0.5)[None, :].astype(np.uint8))[0]
    return HashCode(length=h.shape[0], words=words)


def binarize_batch(h_hat: np.ndarray) -> np.ndarray:
    """Threshold a batch (n, L) at 0.5 into packed (n, W) words."""
    h = np.atleast_2d(np.asarray(h_hat))
    return pack_bits((h >= 0.5).astype(np.uint8))


def hamming(a: HashCode, b: HashCode) -> int:
    """Number of differing bits; requires equal lengths."""
    if a.length != b.length:
        raise ShapeError(f"hamming needs equal lengths, got {a.length} vs {b.length}")
    return int(_popcount(a.words ^ b.words).sum())


def hamming_scan(
    query_words: np.ndarray, db_words: np.ndarray, op_counter: dict | None = None
) -> np.ndarray:
    """Distances from one packed query to every packed database code."""
    q = np.asarray(query_words, dtype=np.uint64)
    db = np.asarray(db_words, dtype=np.uint64)
    if db.ndim != 2 or q.shape != (db.shape[1],):
        raise ShapeError(f"scan shapes disagree: query {q.shape} vs db {db.shape}")
    if op_counter is not None:
        op_counter["word_ops"] = op_counter.get("word_ops", 0) + db.shape[0] * db.shape[1]
    return _popcount(db ^ q).sum(axis=1).astype(np.int64)


@dataclass
class CodeDatabase:
    length: int
    ids: np.ndarray      # (n,) uint64, unique
    labels: np.ndarray   # (n,) uint32
    words: np.ndarray    # (n, ceil(L/64)) uint64

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.uint64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint32)
        self.words = np.ascontiguousarray(self.words, dtype=np.uint64)
        n = len(self.ids)
        if self.words.shape != (n, words_per_code(self.length)) or self.labels.shape != (n,):
            raise ShapeError(
                f"inconsistent database shapes: ids {self.ids.shape}, labels "
                f"{self.labels.shape}, words {self.words.shape}, L={self.length}"
            )
        if len(np.unique(self.ids)) != n:
            raise DataError("database ids must be unique")
        if n:
            _check_padding(self.words, self.length, "CodeDatabase")

    def __len__(self) -> int:
        return len(self.ids)

    def code(self, i: int) -> HashCode:
        return HashCode(length=self.length, words=self.words[i])


@dataclass
class RetrievalResult:
    query_id: int
    ids: np.ndarray         # db ids in rank order
    distances: np.ndarray   # non-decreasing
    relevant: np.ndarray    # bool per rank

    def __len__(self) -> int:
        return len(self.ids)


def rank_all(
    query: HashCode,
    db: CodeDatabase,
    query_label: int,
    query_id: int = -1,
    exclude_id: int | None = None,
    op_counter: dict | None = None,
) -> RetrievalResult:
    """Exhaustive scan: ascending (distance, db id); relevance = label match."""
    if db.length != query.length:
        raise ShapeError(f"code length mismatch: query {query.length} vs db {db.length}")
    dist = hamming_scan(query.words, db.words, op_counter=op_counter)
    ids = db.ids
    labels = db.labels
    if exclude_id is not None:
        keep = ids != np.uint64(exclude_id)
        dist, ids, labels = dist[keep], ids[keep], labels[keep]
    order = np.lexsort((ids, dist))
    return RetrievalResult(
        query_id=query_id,
        ids=ids[order],
        distances=dist[order],
        relevant=(labels[order] == np.uint32(query_label)),
    )


def rank_all_real(
    query_vec: np.ndarray,
    db_vecs: np.ndarray,
    db_ids: np.ndarray,
    db_labels: np.ndarray,
    query_label: int,
    metric: str = "cosine",
    query_id: int = -1,
    exclude_id: int | None = None,
) -> RetrievalResult:
    """Ranking for real-valued vectors: cosine or euclidean distance."""
    q = np.asarray(query_vec, dtype=np.float64).ravel()
    x = np.asarray(db_vecs, dtype=np.float64).reshape(len(db_ids), -1)
    if x.shape[1] != q.shape[0]:
        raise ShapeError(f"vector dim mismatch: query {q.shape[0]} vs db {x.shape[1]}")
    if metric == "cosine":
        qn = max(float(np.linalg.norm(q)), 1e-12)
        xn = np.maximum(np.linalg.norm(x, axis=1), 1e-12)
        dist = 1.0 - (x @ q) / (xn * qn)
    elif metric == "euclidean":
        dist = np.linalg.norm(x - q, axis=1)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    ids = np.asarray(db_ids, dtype=np.uint64)
    labels = np.asarray(db_labels, dtype=np.uint32)
    if exclude_id is not None:
        keep = ids != np.uint64(exclude_id)
        dist, ids, labels = dist[keep], ids[keep], labels[keep]
    order = np.lexsort((ids, dist))
    return RetrievalResult(
        query_id=query_id,
        ids=ids[order],
        distances=dist[order],
        relevant=(labels[order] == np.uint32(query_label)),
    )


def write_codes(path, db: CodeDatabase) -> None:
    with open(path, "wb") as f:
        f.write(RVHC_MAGIC)
        f.write(struct.pack("<IIQ", RVHC_VERSION, db.length, len(db)))
        for i in range(len(db)):
            f.write(struct.pack("<QI", int(db.ids[i]), int(db.labels[i])))
            f.write(np.ascontiguousarray(db.words[i], dtype="<u8").tobytes())


def read_codes(path) -> CodeDatabase:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != RVHC_MAGIC:
            raise DataError(f"bad RVHC magic {magic!r} in {path}")
        head = f.read(16)
        if len(head) != 16:
            raise DataError(f"truncated RVHC header in {path}")
        version, length, count = struct.unpack("<IIQ", head)
        if version != RVHC_VERSION:
            raise DataError(f"unsupported RVHC version {version} in {path}")
        if length < 1:
            raise DataError(f"bad code length {length} in {path}")
        w = words_per_code(length)
        rec = 12 + 8 * w
        raw = f.read(rec * count)
        if len(raw) != rec * count:
            raise DataError(f"truncated RVHC records in {path}")
        if f.read(1):
            raise DataError(f"trailing bytes after {count} records in {path}")
    ids = np.empty(count, dtype=np.uint64)
    labels = np.empty(count, dtype=np.uint32)
    words = np.empty((count, w), dtype=np.uint64)
    for i in range(count):
        off = i * rec
        ids[i], labels[i] = struct.unpack_from("<QI", raw, off)
        words[i] = np.frombuffer(raw, dtype="<u8", count=w, offset=off + 12)
    db = CodeDatabase(length=length, ids=ids, labels=labels, words=words)
    return db
