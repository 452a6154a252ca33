"""Versioned on-disk container for one capture period's flow digests.

Layout (all little-endian): a fixed 64-byte header, a packed flow table
sorted by key, the concatenated per-flow coded streams, and an 8-byte
whole-file checksum trailer. Archives are written once and sealed; every
query must take its parameters from the header, never from ambient config.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .codec import FlowDigest
from .errors import (
    BadMagicError,
    ChecksumError,
    ParameterMismatchError,
    TruncatedArchiveError,
    UnsupportedVersionError,
)
from .flows import CapturePeriod, FlowKey, Protocol, unpack_addr16
from .preprocess import PreprocessConfig

MAGIC = b"DSPA"
FORMAT_VERSION = 1
FILE_EXTENSION = ".dspas"

_HEADER = struct.Struct("<4sHBIBQIBQQQI")
HEADER_SIZE = 64
_RECORD = struct.Struct("<16s16sHHBQQQQ")
RECORD_SIZE = _RECORD.size
_CHECKSUM_PERSON = b"dspas-ar"


@dataclass(frozen=True)
class ArchiveHeader:
    format_version: int
    word_size: int
    chunk_len: int
    q: int
    hash_seed: int
    run_threshold: int
    codec_id: int
    period_id: int
    period_start: int
    period_end: int
    flow_count: int

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig(
            word_size=self.word_size,
            run_threshold=self.run_threshold,
            hash_seed=self.hash_seed,
        )

    def params_tuple(self) -> tuple:
        """Everything that must agree for two archives to be queried together."""
        return (self.format_version, self.word_size, self.chunk_len, self.q,
                self.hash_seed, self.run_threshold, self.codec_id)

    def pack(self) -> bytes:
        raw = _HEADER.pack(
            MAGIC, self.format_version, self.word_size, self.chunk_len, self.q,
            self.hash_seed, self.run_threshold, self.codec_id, self.period_id,
            self.period_start, self.period_end, self.flow_count,
        )
        return raw.ljust(HEADER_SIZE, b"\x00")


@dataclass(frozen=True)
class FlowRecord:
    key: FlowKey
    digest_offset: int
    digest_length: int
    original_word_count: int
    first_seen: int

    def pack(self) -> bytes:
        kp = self.key.packed()
        return _RECORD.pack(
            kp[:16], kp[16:32],
            self.key.src_port, self.key.dst_port, int(self.key.protocol),
            self.digest_offset, self.digest_length,
            self.original_word_count, self.first_seen,
        )

    @classmethod
    def unpack(cls, data: bytes) -> "FlowRecord":
        src, dst, sport, dport, proto, off, length, words, seen = _RECORD.unpack(data)
        key = FlowKey(unpack_addr16(src), unpack_addr16(dst), sport, dport, Protocol(proto))
        return cls(key, off, length, words, seen)


@dataclass
class DigestArchive:
    header: ArchiveHeader
    flows: list[FlowRecord]
    blob: bytes
    path: str = ""

    def digest_for(self, record: FlowRecord) -> FlowDigest:
        stream = self.blob[record.digest_offset : record.digest_offset + record.digest_length]
        (chunk_count,) = struct.unpack_from("<I", stream, 0)
        exponents = np.frombuffer(stream, dtype=np.uint8, count=chunk_count, offset=4)
        return FlowDigest(
            key=record.key,
            chunk_count=chunk_count,
            original_word_count=record.original_word_count,
            exponents=exponents,
            coded_stream=stream,
            first_seen=record.first_seen,
        )

    def find(self, key: FlowKey) -> FlowRecord | None:
        target = key.sort_key()
        lo, hi = 0, len(self.flows)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.flows[mid].key.sort_key() < target:
                lo = mid + 1
            else:
                hi = mid
        if lo < len(self.flows) and self.flows[lo].key == key:
            return self.flows[lo]
        return None


def _checksum(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8, person=_CHECKSUM_PERSON).digest()


def write_archive(
    path: str,
    period: CapturePeriod,
    digests: list[FlowDigest],
    cfg: PreprocessConfig,
    chunk_len: int,
    q: int,
    codec_id: int,
) -> None:
    """Serialize one period's digests; duplicate flow keys are a contract error."""
    keys = [d.key for d in digests]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate flow key within one period")
    order = sorted(range(len(digests)), key=lambda i: digests[i].key.sort_key())

    records = []
    blob = bytearray()
    for i in order:
        d = digests[i]
        records.append(FlowRecord(
            key=d.key,
            digest_offset=len(blob),
            digest_length=len(d.coded_stream),
            original_word_count=d.original_word_count,
            first_seen=int(d.first_seen),
        ))
        blob += d.coded_stream

    header = ArchiveHeader(
        format_version=FORMAT_VERSION,
        word_size=cfg.word_size,
        chunk_len=chunk_len,
        q=q,
        hash_seed=cfg.hash_seed,
        run_threshold=cfg.run_threshold,
        codec_id=codec_id,
        period_id=period.period_id,
        period_start=int(period.start_time),
        period_end=int(period.end_time),
        flow_count=len(records),
    )
    body = header.pack() + b"".join(r.pack() for r in records) + bytes(blob)
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(_checksum(body))


def read_archive(path: str, expected: tuple | None = None) -> DigestArchive:
    """Load and validate an archive; expected=(cfg, chunk_len, q) adds a parameter check."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < HEADER_SIZE + 8:
        raise TruncatedArchiveError(f"{path}: {len(data)} bytes is too short for an archive")
    if data[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {data[:4]!r}")
    if _checksum(data[:-8]) != data[-8:]:
        raise ChecksumError(f"{path}: checksum trailer does not match file contents")
    fields = _HEADER.unpack(data[: _HEADER.size])
    header = ArchiveHeader(*fields[1:])
    if header.format_version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: format version {header.format_version}, reader supports {FORMAT_VERSION}"
        )
    table_end = HEADER_SIZE + header.flow_count * RECORD_SIZE
    if len(data) - 8 < table_end:
        raise TruncatedArchiveError(f"{path}: flow table extends past end of file")
    records = [
        FlowRecord.unpack(data[off : off + RECORD_SIZE])
        for off in range(HEADER_SIZE, table_end, RECORD_SIZE)
    ]
    blob = data[table_end:-8]
    cursor = 0
    for rec in records:
        if rec.digest_offset != cursor or rec.digest_offset + rec.digest_length > len(blob):
            raise TruncatedArchiveError(f"{path}: digest ranges are not contiguous/in-bounds")
        cursor += rec.digest_length
    archive = DigestArchive(header=header, flows=records, blob=blob, path=path)
    if expected is not None:
        cfg, chunk_len, q = expected
        check_params(archive, cfg, chunk_len, q)
    return archive


def check_params(archive: DigestArchive, cfg: PreprocessConfig, chunk_len: int, q: int) -> None:
    h = archive.header
    mismatches = []
    if h.word_size != cfg.word_size:
        mismatches.append(f"word_size {h.word_size} != {cfg.word_size}")
    if h.run_threshold != cfg.run_threshold:
        mismatches.append(f"run_threshold {h.run_threshold} != {cfg.run_threshold}")
    if h.hash_seed != cfg.hash_seed:
        mismatches.append(f"hash_seed {h.hash_seed:#x} != {cfg.hash_seed:#x}")
    if h.chunk_len != chunk_len:
        mismatches.append(f"chunk_len {h.chunk_len} != {chunk_len}")
    if h.q != q:
        mismatches.append(f"q {h.q} != {q}")
    if mismatches:
        raise ParameterMismatchError(f"{archive.path or 'archive'}: " + "; ".join(mismatches))


def check_archives_compatible(archives: list[DigestArchive]) -> None:
    if not archives:
        raise ValueError("no archives to query")
    first = archives[0].header.params_tuple()
    for a in archives[1:]:
        if a.header.params_tuple() != first:
            raise ParameterMismatchError(
                f"{a.path or 'archive'} parameters differ from {archives[0].path or 'archive'}"
            )


def list_flows(archive: DigestArchive, predicate=None) -> list[FlowRecord]:
    """Flow records in key order, optionally filtered by a key predicate."""
    if predicate is None:
        return list(archive.flows)
    return [r for r in archive.flows if predicate(r.key)]
