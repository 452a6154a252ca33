"""Payload preprocessing: run stripping, block hashing, padding, wildcard handling.

Every byte stream (flow payload or query excerpt) passes through the same
pipeline before any transform work: long single-byte runs are truncated,
then consecutive W-byte blocks are hashed into signed W-byte words. The
query side must reproduce the digest side bit for bit, so the hash function
and its seed are part of the archive parameters, never ambient state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import QueryTooShortError

# Shipped default for the keyed word hash (pi hex digits; any value works,
# it just has to be recorded in the archive header).
DEFAULT_HASH_SEED = 0x243F6A8885A308D3

_MASK64 = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_M3 = np.uint64(0xD6E8FEB86659FD93)

WILDCARD_WORD_MODE = "word"
WILDCARD_BYTE_MODE = "byte"


@dataclass(frozen=True)
class PreprocessConfig:
    """Parameters shared by digesting and querying.

    word_size is limited to 1..8 bytes so a word always fits a 64-bit
    machine integer; the amplitude bound follows from the word size.
    """

    word_size: int = 8
    run_threshold: int = 64
    hash_seed: int = DEFAULT_HASH_SEED

    def __post_init__(self):
        if not 1 <= self.word_size <= 8:
            raise ValueError(f"word_size must be in [1, 8], got {self.word_size}")
        if self.run_threshold < 2 * self.word_size:
            raise ValueError(
                f"run_threshold must be >= 2*word_size, got {self.run_threshold}"
            )
        if not 0 <= self.hash_seed <= _MASK64:
            raise ValueError("hash_seed must fit in 64 bits")

    @property
    def amplitude_bound(self) -> int:
        """Largest representable word value: 2**(8W-1) - 1."""
        return (1 << (8 * self.word_size - 1)) - 1


@dataclass(frozen=True)
class WildcardMask:
    """Byte positions of an excerpt whose values are unknown."""

    positions: frozenset[int] = field(default_factory=frozenset)

    @classmethod
    def empty(cls) -> "WildcardMask":
        return cls(frozenset())

    @classmethod
    def of(cls, positions) -> "WildcardMask":
        return cls(frozenset(int(p) for p in positions))

    def __len__(self) -> int:
        return len(self.positions)

    def validate(self, excerpt_len: int) -> None:
        if self.positions and not all(0 <= p < excerpt_len for p in self.positions):
            raise ValueError("wildcard positions out of excerpt range")


@dataclass
class WordSignal:
    """Sequence of signed words produced by preprocessing one byte stream."""

    words: np.ndarray  # int64
    source_len_bytes: int
    alignment_offset: int = 0

    def __len__(self) -> int:
        return int(self.words.size)


def _mix64(x: np.ndarray, seed: int) -> np.ndarray:
    """Keyed avalanche mixer over uint64 lanes (non-cryptographic)."""
    s = np.uint64((seed * 0x9E3779B97F4A7C15) & _MASK64)
    x = (x ^ s) * _M1
    x ^= x >> np.uint64(30)
    x *= _M2
    x ^= x >> np.uint64(27)
    x *= _M3
    x ^= x >> np.uint64(31)
    return x


def hash_bytes64(data: bytes, seed: int) -> int:
    """Stable 64-bit digest of an arbitrary byte string under the mixer.

    Used to derive per-flow padding seeds from serialized flow keys.
    """
    pad = (-len(data) - 8) % 8
    buf = data + b"\x00" * pad + len(data).to_bytes(8, "little")
    lanes = np.frombuffer(buf, dtype="<u8")
    h = np.array([(seed ^ 0xA076_1D64_78BD_642F) & _MASK64], dtype=np.uint64)
    for lane in lanes:
        h = _mix64(h ^ lane, seed)
    return int(h[0])


def flow_pad_seed(key_bytes: bytes, period_id: int, hash_seed: int) -> int:
    """Padding seed for one (flow, period): stable across runs, distinct per flow."""
    return hash_bytes64(key_bytes + int(period_id).to_bytes(8, "little", signed=True), hash_seed)


def _signed_words(u: np.ndarray, word_size: int) -> np.ndarray:
    """Truncate uint64 lanes to 8W bits and reinterpret as signed integers."""
    if word_size == 8:
        return u.view(np.int64) if u.base is None else u.copy().view(np.int64)
    bits = 8 * word_size
    u = u & np.uint64((1 << bits) - 1)
    out = u.astype(np.int64)
    high = out >= np.int64(1 << (bits - 1))
    out[high] -= np.int64(1 << bits)
    return out


def _run_keep_mask(arr: np.ndarray, run_threshold: int) -> np.ndarray:
    """Boolean mask keeping at most run_threshold bytes of every single-byte run."""
    n = arr.size
    if n == 0:
        return np.ones(0, dtype=bool)
    boundaries = np.empty(n, dtype=bool)
    boundaries[0] = True
    np.not_equal(arr[1:], arr[:-1], out=boundaries[1:])
    run_id = np.cumsum(boundaries) - 1
    starts = np.flatnonzero(boundaries)
    return (np.arange(n) - starts[run_id]) < run_threshold


def strip_repetitive_runs(data: bytes, run_threshold: int) -> bytes:
    """Truncate every maximal run of one repeated byte to run_threshold copies.

    Runs are truncated rather than removed so that an excerpt containing part
    of a run still lines up with the digested payload.
    """
    if run_threshold < 2:
        raise ValueError("run_threshold must be >= 2")
    arr = np.frombuffer(data, dtype=np.uint8)
    keep = _run_keep_mask(arr, run_threshold)
    if keep.all():
        return data
    return arr[keep].tobytes()


def _strip_with_index(data: bytes, run_threshold: int) -> tuple[np.ndarray, np.ndarray]:
    """Like strip_repetitive_runs but returns (kept bytes, original indices)."""
    arr = np.frombuffer(data, dtype=np.uint8)
    keep = _run_keep_mask(arr, run_threshold)
    kept_idx = np.flatnonzero(keep)
    return arr[kept_idx], kept_idx


def _fold_blocks(arr: np.ndarray, word_size: int) -> np.ndarray:
    """Fold consecutive word_size-byte blocks of a uint8 array into uint64 lanes."""
    n_words = arr.size // word_size
    blocks = arr[: n_words * word_size]
    if word_size == 8:
        return np.ascontiguousarray(blocks).view("<u8")
    blocks = blocks.reshape(n_words, word_size).astype(np.uint64)
    folded = np.zeros(n_words, dtype=np.uint64)
    for i in range(word_size):
        folded |= blocks[:, i] << np.uint64(8 * i)
    return folded


def window_hash(data: bytes, cfg: PreprocessConfig, alignment_offset: int = 0) -> WordSignal:
    """Hash consecutive non-overlapping W-byte blocks into signed words.

    Bytes before alignment_offset and a trailing partial block are dropped.
    Fewer than W bytes after the offset yields an empty signal.
    """
    if not 0 <= alignment_offset < cfg.word_size:
        raise ValueError("alignment_offset must be in [0, word_size)")
    arr = np.frombuffer(data, dtype=np.uint8)[alignment_offset:]
    folded = _fold_blocks(arr, cfg.word_size)
    words = _signed_words(_mix64(folded, cfg.hash_seed), cfg.word_size)
    return WordSignal(words=words, source_len_bytes=len(data), alignment_offset=alignment_offset)


def _uniform_words(n: int, word_size: int, key: tuple[int, int]) -> np.ndarray:
    """Deterministic uniform words over the full signed 8W-bit range.

    Counter-based generator so padding is reproducible from (seed, chunk index)
    without storing the pad bytes anywhere.
    """
    gen = np.random.Generator(np.random.Philox(key=np.array(key, dtype=np.uint64)))
    raw = gen.integers(0, 1 << 64, size=n, dtype=np.uint64, endpoint=False)
    return _signed_words(raw, word_size)


def pad_chunk(signal: WordSignal, chunk_len: int, pad_seed: int, word_size: int = 8) -> WordSignal:
    """Extend a word signal with pseudorandom words to a whole number of chunks.

    An empty signal still becomes one full chunk so that every flow, however
    small, produces a digest.
    """
    if chunk_len < 1:
        raise ValueError("chunk_len must be >= 1")
    n = len(signal)
    target = chunk_len if n == 0 else math.ceil(n / chunk_len) * chunk_len
    if target == n:
        return signal
    first_pad_chunk = n // chunk_len
    pad = _uniform_words(target - n, word_size, (pad_seed & _MASK64, first_pad_chunk))
    return WordSignal(
        words=np.concatenate([signal.words, pad]),
        source_len_bytes=signal.source_len_bytes,
        alignment_offset=signal.alignment_offset,
    )


def preprocess_payload(data: bytes, cfg: PreprocessConfig) -> WordSignal:
    """Digest-side preprocessing: strip runs, hash blocks at offset 0."""
    return window_hash(strip_repetitive_runs(data, cfg.run_threshold), cfg, 0)


def _masked_word_indices(
    mask_positions: np.ndarray, dropped: int, word_size: int, n_words: int
) -> np.ndarray:
    """Word indices (for a given leading-byte drop) touched by >=1 masked byte."""
    rel = mask_positions[mask_positions >= dropped] - dropped
    idx = rel // word_size
    return np.unique(idx[idx < n_words])


def preprocess_excerpt(
    excerpt: bytes,
    mask: WildcardMask,
    cfg: PreprocessConfig,
    wildcard_mode: str = WILDCARD_WORD_MODE,
) -> list[WordSignal]:
    """Produce the W alignment signals for a query excerpt.

    For each drop count d in [0, W) the first d bytes are discarded and the
    remainder is block-hashed exactly like a payload. In word mode, any word
    whose source window contains a masked byte is replaced by the zero word
    after hashing; zero words drop out of every correlation sum, which is the
    mean-value substitution at the level where the signal lives. Byte mode
    instead writes 0x00 over masked bytes before hashing and is kept only for
    fidelity comparisons (a window hashed with a placeholder byte yields a
    word uncorrelated with the payload word, which is strictly worse).

    Masked byte values never influence the result in word mode, but they do
    pass through run stripping literally; masks over repetitive regions of an
    excerpt should be avoided.
    """
    if wildcard_mode not in (WILDCARD_WORD_MODE, WILDCARD_BYTE_MODE):
        raise ValueError(f"unknown wildcard mode: {wildcard_mode!r}")
    w = cfg.word_size
    if len(excerpt) < 2 * w:
        raise QueryTooShortError(
            f"excerpt of {len(excerpt)} bytes is shorter than 2*W = {2 * w}"
        )
    mask.validate(len(excerpt))

    stripped, kept_idx = _strip_with_index(excerpt, cfg.run_threshold)
    if mask.positions:
        orig = np.fromiter(mask.positions, dtype=np.int64)
        new_positions = np.searchsorted(kept_idx, orig)
        survived = (new_positions < kept_idx.size) & (kept_idx[np.minimum(new_positions, kept_idx.size - 1)] == orig)
        new_positions = np.sort(new_positions[survived])
    else:
        new_positions = np.empty(0, dtype=np.int64)

    work = stripped
    if wildcard_mode == WILDCARD_BYTE_MODE and new_positions.size:
        work = stripped.copy()
        work[new_positions] = 0

    data = work.tobytes()
    signals: list[WordSignal] = []
    for dropped in range(w):
        sig = window_hash(data, cfg, dropped)
        if len(sig) == 0:
            raise QueryTooShortError(
                f"excerpt leaves no complete word at drop offset {dropped} after stripping"
            )
        if wildcard_mode == WILDCARD_WORD_MODE and new_positions.size:
            hit = _masked_word_indices(new_positions, dropped, w, len(sig))
            if hit.size:
                sig.words = sig.words.copy()
                sig.words[hit] = 0
        signals.append(sig)
    return signals
