"""Transform coding of word signals: DCT, q-bit quantization, entropy coding.

The forward transform is the unnormalized cosine transform
X_k = sum_n x_n cos[(pi/L)(n+1/2)k]; the inverse applies the matching
normalization so inverse(forward(x)) == x to double-precision accuracy.
Quantization keeps the q most significant bits of each coefficient against
a per-chunk power-of-two scale anchored at the chunk's largest magnitude.
"""

from __future__ import annotations

import lzma
import re
import struct
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.fft

from .errors import CodecError
from .preprocess import WordSignal, pad_chunk

DEFAULT_CHUNK_LEN = 1024
DEFAULT_QUANT_BITS = 4

CODEC_STORED = 0
CODEC_RLE_LZMA = 1
DEFAULT_CODEC = CODEC_RLE_LZMA

# Raw LZMA2 keeps per-flow overhead to a few bytes; pb=0/lc=0 measurably
# beats the defaults on packed quantizer output.
_LZMA_FILTERS = [{"id": lzma.FILTER_LZMA2, "preset": 6, "pb": 0, "lc": 0}]

_RLE_ESCAPE = 0xA5
_RLE_MIN_RUN = 4
_PACK_SLAB = 1 << 20  # codes per packing slab; slab*q bits is always whole bytes


@dataclass
class QuantizedChunk:
    """q-bit signed codes for one transform chunk plus its scale exponent."""

    codes: np.ndarray  # int32
    exponent: int
    chunk_index: int = 0


@dataclass
class FlowDigest:
    """Encoded digest of one flow payload within one capture period.

    coded_stream holds the self-describing container
    [chunk_count:u32][exponents:u8 x chunk_count][codec_id:u8][compressed blob];
    chunk_count and exponents are mirrored as fields for convenience.
    """

    key: object  # FlowKey; untyped here to keep this module free of flow imports
    chunk_count: int
    original_word_count: int
    exponents: np.ndarray  # uint8
    coded_stream: bytes
    first_seen: int = 0


def dct_forward(x: np.ndarray) -> np.ndarray:
    """Forward transform along the last axis (any leading batch shape)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("empty chunk")
    return scipy.fft.dct(x, type=2, axis=-1) * 0.5


def dct_inverse(coeffs: np.ndarray) -> np.ndarray:
    """Exact inverse of dct_forward along the last axis."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-1] == 0:
        raise ValueError("empty chunk")
    return scipy.fft.idct(2.0 * coeffs, type=2, axis=-1)


def _ceil_log2(values: np.ndarray) -> np.ndarray:
    """ceil(log2(v)) computed exactly for positive floats via frexp."""
    mant, ex = np.frexp(values)
    return np.where(mant == 0.5, ex - 1, ex)


def _quantize_batch(coeffs: np.ndarray, q: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized quantizer over a (chunks, L) array -> (codes int32, exponents)."""
    if not 2 <= q <= 16:
        raise ValueError(f"quantization bits must be in [2, 16], got {q}")
    coeffs = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    m = np.abs(coeffs).max(axis=1)
    e = np.maximum(0, _ceil_log2(m + 1.0) - (q - 1)).astype(np.int64)
    top = (1 << (q - 1)) - 1
    codes = np.round(coeffs / np.exp2(e.astype(np.float64))[:, None])
    # Widen the scale by one bit where the extreme coefficient would clip;
    # this keeps every reconstruction error within half a step.
    sat = codes.max(axis=1) > top
    if sat.any():
        e = e + sat.astype(np.int64)
        codes = np.round(coeffs / np.exp2(e.astype(np.float64))[:, None])
    codes = np.clip(codes, -(top + 1), top).astype(np.int32)
    return codes, e


def quantize(coeffs: np.ndarray, q: int, chunk_index: int = 0) -> QuantizedChunk:
    """Quantize one coefficient chunk to q-bit signed codes."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.ndim != 1:
        raise ValueError("quantize expects a single chunk; see _quantize_batch")
    codes, e = _quantize_batch(coeffs[None, :], q)
    return QuantizedChunk(codes=codes[0], exponent=int(e[0]), chunk_index=chunk_index)


def dequantize(chunk: QuantizedChunk) -> np.ndarray:
    """Map codes back to coefficient estimates: code * 2**e."""
    return chunk.codes.astype(np.float64) * float(2.0 ** chunk.exponent)


def data_reduction_ratio(word_size: int, q: int) -> Fraction:
    """Pre-entropy-coding reduction floor: W*8/q."""
    if q <= 0:
        raise ValueError("q must be positive")
    return Fraction(word_size * 8, q)


def _pack_codes(codes: np.ndarray, q: int) -> bytes:
    """Pack signed codes q bits each, two's complement, LSB-first within bytes."""
    flat = np.ascontiguousarray(codes, dtype=np.int64).ravel()
    out = bytearray()
    for start in range(0, flat.size, _PACK_SLAB):
        slab = flat[start : start + _PACK_SLAB]
        u = (slab & ((1 << q) - 1)).astype("<u2")
        bits = np.unpackbits(u.view(np.uint8).reshape(-1, 2), axis=1, bitorder="little")
        out += np.packbits(bits[:, :q].ravel(), bitorder="little").tobytes()
    return bytes(out)


def _unpack_codes(data: bytes, n_codes: int, q: int) -> np.ndarray:
    """Inverse of _pack_codes; returns int32 codes."""
    need = (n_codes * q + 7) // 8
    if len(data) < need:
        raise CodecError(f"packed code stream holds {len(data)} bytes, need {need}")
    pieces = []
    arr = np.frombuffer(data, dtype=np.uint8)
    byte_pos = 0
    for start in range(0, n_codes, _PACK_SLAB):
        count = min(_PACK_SLAB, n_codes - start)
        nbytes = (count * q + 7) // 8
        bits = np.unpackbits(arr[byte_pos : byte_pos + nbytes], bitorder="little")
        bits = bits[: count * q].reshape(count, q)
        wide = np.zeros((count, 16), dtype=np.uint8)
        wide[:, :q] = bits
        u = np.packbits(wide, axis=1, bitorder="little").view("<u2").ravel().astype(np.int32)
        u -= (u >= (1 << (q - 1))) * (1 << q)
        pieces.append(u)
        byte_pos += nbytes
    return np.concatenate(pieces) if pieces else np.empty(0, dtype=np.int32)


def _rle_encode(data: bytes) -> bytes:
    """Collapse runs of >=4 zero bytes into escape + 16-bit count.

    A literal escape byte is written as escape + zero count. Applied to the
    packed code stream, so runs of zero codes collapse wherever they fill
    whole bytes.
    """
    esc = bytes([_RLE_ESCAPE])
    out = bytearray()
    pos = 0
    for m in re.finditer(b"\x00{%d,}" % _RLE_MIN_RUN, data):
        out += data[pos : m.start()].replace(esc, esc + b"\x00\x00")
        run = m.end() - m.start()
        while run:
            k = min(run, 0xFFFF)
            out += struct.pack("<BH", _RLE_ESCAPE, k)
            run -= k
        pos = m.end()
    out += data[pos:].replace(esc, esc + b"\x00\x00")
    return bytes(out)


def _rle_decode(data: bytes) -> bytes:
    out = bytearray()
    arr = np.frombuffer(data, dtype=np.uint8)
    hits = np.flatnonzero(arr == _RLE_ESCAPE)
    pos = 0
    i = 0
    while i < hits.size:
        h = int(hits[i])
        if h < pos:
            i += 1
            continue
        if h + 3 > len(data):
            raise CodecError("truncated zero-run escape")
        out += data[pos:h]
        count = struct.unpack_from("<H", data, h + 1)[0]
        out += b"\x00" * count if count else bytes([_RLE_ESCAPE])
        pos = h + 3
        i += 1
    out += data[pos:]
    return bytes(out)


def _compress(packed: bytes, codec_id: int) -> bytes:
    if codec_id == CODEC_STORED:
        return packed
    if codec_id == CODEC_RLE_LZMA:
        return lzma.compress(_rle_encode(packed), format=lzma.FORMAT_RAW, filters=_LZMA_FILTERS)
    raise CodecError(f"unknown codec id {codec_id}")


def _decompress(blob: bytes, codec_id: int) -> bytes:
    if codec_id == CODEC_STORED:
        return blob
    if codec_id == CODEC_RLE_LZMA:
        try:
            raw = lzma.decompress(blob, format=lzma.FORMAT_RAW, filters=_LZMA_FILTERS)
        except lzma.LZMAError as exc:
            raise CodecError(f"compressed stream is corrupt: {exc}") from exc
        return _rle_decode(raw)
    raise CodecError(f"unknown codec id {codec_id}")


def entropy_encode(chunks: list[QuantizedChunk], q: int, codec_id: int = DEFAULT_CODEC) -> bytes:
    """Serialize quantized chunks into the self-describing coded stream."""
    if not chunks:
        raise ValueError("cannot encode an empty chunk list")
    chunk_len = chunks[0].codes.size
    codes = np.stack([c.codes for c in chunks])
    if codes.shape[1] != chunk_len or any(c.codes.size != chunk_len for c in chunks):
        raise ValueError("all chunks must share one length")
    exponents = np.array([c.exponent for c in chunks], dtype=np.uint8)
    blob = _compress(_pack_codes(codes, q), codec_id)
    return struct.pack("<I", len(chunks)) + exponents.tobytes() + bytes([codec_id]) + blob


def entropy_decode(stream: bytes, chunk_len: int, q: int) -> list[QuantizedChunk]:
    """Exact inverse of entropy_encode."""
    if len(stream) < 5:
        raise CodecError("coded stream shorter than its fixed header")
    (chunk_count,) = struct.unpack_from("<I", stream, 0)
    head = 4 + chunk_count + 1
    if len(stream) < head:
        raise CodecError("coded stream truncated inside the exponent table")
    exponents = np.frombuffer(stream, dtype=np.uint8, count=chunk_count, offset=4)
    codec_id = stream[4 + chunk_count]
    packed = _decompress(stream[head:], codec_id)
    n_codes = chunk_count * chunk_len
    expect = (n_codes * q + 7) // 8
    if len(packed) != expect:
        raise CodecError(f"decoded {len(packed)} packed bytes, expected {expect}")
    codes = _unpack_codes(packed, n_codes, q).reshape(chunk_count, chunk_len)
    return [
        QuantizedChunk(codes=codes[i], exponent=int(exponents[i]), chunk_index=i)
        for i in range(chunk_count)
    ]


def digest_signal(
    signal: WordSignal,
    chunk_len: int,
    q: int,
    pad_seed: int,
    word_size: int = 8,
    codec_id: int = DEFAULT_CODEC,
    key=None,
    first_seen: int = 0,
) -> FlowDigest:
    """Full digest path for one flow: pad, transform, quantize, encode."""
    n = len(signal)
    padded = pad_chunk(signal, chunk_len, pad_seed, word_size)
    grid = padded.words.reshape(-1, chunk_len).astype(np.float64)
    coeffs = dct_forward(grid)
    codes, exps = _quantize_batch(coeffs, q)
    chunks = [
        QuantizedChunk(codes=codes[i], exponent=int(exps[i]), chunk_index=i)
        for i in range(codes.shape[0])
    ]
    stream = entropy_encode(chunks, q, codec_id)
    return FlowDigest(
        key=key,
        chunk_count=len(chunks),
        original_word_count=n,
        exponents=exps.astype(np.uint8),
        coded_stream=stream,
        first_seen=first_seen,
    )


def reconstruct_signal(digest: FlowDigest, chunk_len: int, q: int) -> np.ndarray:
    """Decode, dequantize, and inverse-transform a digest into real samples.

    Returns chunk_count*chunk_len samples; entries past original_word_count
    reconstruct the padding and are flagged by the caller, not trimmed here.
    """
    chunks = entropy_decode(digest.coded_stream, chunk_len, q)
    if len(chunks) != digest.chunk_count:
        raise CodecError(
            f"stream holds {len(chunks)} chunks, digest records {digest.chunk_count}"
        )
    codes = np.stack([c.codes for c in chunks]).astype(np.float64)
    scale = np.exp2(np.array([c.exponent for c in chunks], dtype=np.float64))
    return dct_inverse(codes * scale[:, None]).ravel()
