"""Synthetic high-entropy flow corpora with planted ground-truth excerpts.

Planted excerpts are slices of the carrier flow's own content, so they occur
naturally exactly once; generation verifies that by exhaustive substring scan
and redraws the corpus on the (vanishing) chance of a collision. Corruption
plants alter the carrier copy after the excerpt is taken, modeling a sender
who perturbs the data in transit.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass

import numpy as np

from .codec import DEFAULT_CODEC, digest_signal
from .flows import CapturePeriod, FlowKey, Protocol
from .preprocess import PreprocessConfig, WildcardMask, flow_pad_seed, preprocess_payload

PLACEHOLDER_BYTE = ord("?")


@dataclass(frozen=True)
class PlantSpec:
    """One excerpt to plant: length, wildcards, optional corruption."""

    length: int
    wildcard_count: int = 0
    corrupt_spacing: int = 0  # substitute one byte every N bytes (0 = none)
    insert_mode: bool = False  # insert instead of substitute


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    flow_count: int
    min_bytes: int
    max_bytes: int
    seed: int
    plants: tuple[PlantSpec, ...] = ()

    def __post_init__(self):
        if self.flow_count < 1 or self.min_bytes < 1 or self.max_bytes < self.min_bytes:
            raise ValueError("invalid corpus dimensions")


@dataclass
class Plant:
    spec: PlantSpec
    excerpt: bytes
    mask: WildcardMask
    carrier_key: FlowKey
    byte_offset: int


@dataclass
class Corpus:
    flows: list[tuple[FlowKey, bytes]]
    plants: list[Plant]
    seed: int

    @property
    def total_bytes(self) -> int:
        return sum(len(d) for _, d in self.flows)


def _flow_key(i: int) -> FlowKey:
    src = ipaddress.IPv4Address(0x0A000001 + i)
    dst = ipaddress.IPv4Address(0xC0A80001 + (i % 250))
    proto = Protocol.TCP if i % 4 else Protocol.UDP
    return FlowKey(src, dst, 1024 + (i % 60000), 80 if proto is Protocol.TCP else 53, proto)


def _corrupt(data: bytes, spacing: int, insert: bool, rng: np.random.Generator) -> bytes:
    """Alter one byte every `spacing` bytes: substitute in place or insert."""
    arr = bytearray(data)
    positions = list(range(spacing - 1, len(data), spacing))
    if not insert:
        for p in positions:
            arr[p] ^= 0x55
        return bytes(arr)
    out = bytearray()
    prev = 0
    for p in positions:
        out += arr[prev : p + 1]
        out.append(int(rng.integers(0, 256)))
        prev = p + 1
    out += arr[prev:]
    return bytes(out)


def generate_corpus(spec: SyntheticCorpusSpec, max_attempts: int = 5) -> Corpus:
    """Draw flow contents and plant excerpts, verifying corpus-wide uniqueness."""
    for attempt in range(max_attempts):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, attempt]))
        sizes = rng.integers(spec.min_bytes, spec.max_bytes + 1, size=spec.flow_count)
        contents = [rng.integers(0, 256, size=int(n), dtype=np.uint8).tobytes() for n in sizes]

        plants: list[Plant] = []
        originals: list[bytes] = []
        for ps in spec.plants:
            eligible = [i for i, c in enumerate(contents) if len(c) >= ps.length + 1]
            if not eligible:
                raise ValueError(f"no flow large enough for a {ps.length}-byte plant")
            carrier = int(rng.choice(eligible))
            body = contents[carrier]
            offset = int(rng.integers(0, len(body) - ps.length + 1))
            original = body[offset : offset + ps.length]
            originals.append(original)

            if ps.corrupt_spacing:
                altered = _corrupt(original, ps.corrupt_spacing, ps.insert_mode, rng)
                contents[carrier] = body[:offset] + altered + body[offset + ps.length :]

            mask = WildcardMask.empty()
            excerpt = original
            if ps.wildcard_count:
                positions = rng.choice(ps.length, size=ps.wildcard_count, replace=False)
                mask = WildcardMask.of(int(p) for p in positions)
                buf = bytearray(original)
                for p in mask.positions:
                    buf[p] = PLACEHOLDER_BYTE
                excerpt = bytes(buf)

            plants.append(Plant(
                spec=ps, excerpt=excerpt, mask=mask,
                carrier_key=_flow_key(carrier), byte_offset=offset,
            ))

        # Exhaustive scan: the original slice must occur exactly once corpus-wide
        # (zero times when the carrier copy was corrupted).
        ok = True
        for ps, original in zip(spec.plants, originals):
            count = sum(c.count(original) for c in contents)
            expect = 0 if ps.corrupt_spacing else 1
            if count != expect:
                ok = False
                break
        if ok:
            keys = [_flow_key(i) for i in range(spec.flow_count)]
            return Corpus(flows=list(zip(keys, contents)), plants=plants, seed=spec.seed)
    raise RuntimeError("corpus generation kept colliding; inputs too degenerate")


def digest_corpus(
    corpus: Corpus,
    cfg: PreprocessConfig,
    chunk_len: int,
    q: int,
    codec_id: int = DEFAULT_CODEC,
    period_id: int = 0,
    period_seconds: float = 3600.0,
):
    """Digest every corpus flow into FlowDigest records plus the period stamp."""
    digests = []
    n = len(corpus.flows)
    for i, (key, data) in enumerate(corpus.flows):
        signal = preprocess_payload(data, cfg)
        pad_seed = flow_pad_seed(key.packed(), period_id, cfg.hash_seed)
        first_seen = int(period_id * period_seconds + (i * period_seconds) // max(n, 1))
        digests.append(digest_signal(
            signal, chunk_len, q, pad_seed,
            word_size=cfg.word_size, codec_id=codec_id, key=key, first_seen=first_seen,
        ))
    period = CapturePeriod(
        period_id=period_id,
        start_time=period_id * period_seconds,
        end_time=(period_id + 1) * period_seconds,
        flow_count=n,
    )
    return digests, period
