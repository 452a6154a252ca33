"""Attribution queries: reconstruct digests, correlate excerpts, detect peaks.

The unknown byte offset of an excerpt relative to the digest's block grid is
handled by correlating all W drop-offset variants of the excerpt; the variant
whose grid coincides with the payload's produces the peak. Reported
alignment_offset is the byte phase of the match start, so that
estimated_byte_offset = Z*W + alignment_offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from .archive import DigestArchive, check_archives_compatible
from .codec import FlowDigest, reconstruct_signal
from .errors import NoSignalError
from .flows import FlowKey
from .preprocess import WildcardMask, preprocess_excerpt
from .theory import (
    NoiseModel,
    SystemParams,
    corruption_threshold_factor,
    select_threshold_coefficient,
)

_FFT_MIN_WORK = 1 << 18  # below this, direct correlation is faster and exact


@dataclass
class Query:
    excerpt: bytes
    mask: WildcardMask = field(default_factory=WildcardMask.empty)
    period_range: tuple[int, int] | None = None
    threshold_override: float | None = None


@dataclass(frozen=True)
class Threshold:
    k: float
    t: float
    sigma_c: float


@dataclass
class MatchResult:
    key: FlowKey
    period_id: int
    peak_position: int
    alignment_offset: int
    peak_value: float
    threshold: Threshold
    estimated_byte_offset: int

    @property
    def ratio(self) -> float:
        return self.peak_value / self.threshold.t


@dataclass
class QueryStats:
    """Operation counters; wildcard masks must not change any of them."""

    flows_considered: int = 0
    correlations_run: int = 0
    correlation_points: int = 0
    thresholds_computed: int = 0
    peak_candidates: int = 0
    flows_skipped_short: int = 0
    flows_skipped_constant: int = 0

    def snapshot(self) -> tuple:
        return (self.flows_considered, self.correlations_run, self.correlation_points,
                self.thresholds_computed)


@dataclass
class ReconstructedSignal:
    """Real-valued flow signal; samples at index >= pad_start reconstruct padding."""

    samples: np.ndarray
    pad_start: int


def reconstruct_flow_signal(digest: FlowDigest, chunk_len: int, q: int) -> ReconstructedSignal:
    samples = reconstruct_signal(digest, chunk_len, q)
    return ReconstructedSignal(samples=samples, pad_start=digest.original_word_count)


def correlate(payload: np.ndarray, excerpt: np.ndarray) -> np.ndarray:
    """Sliding dot product C_n = sum_i payload[n+i] * excerpt[i] (valid range)."""
    payload = np.asarray(payload, dtype=np.float64)
    excerpt = np.asarray(excerpt, dtype=np.float64)
    m, l = payload.size, excerpt.size
    if l == 0 or l > m:
        raise ValueError(f"excerpt signal length {l} must be in [1, {m}]")
    if m * l <= _FFT_MIN_WORK:
        return np.correlate(payload, excerpt, mode="valid")
    size = scipy.fft.next_fast_len(m + l - 1)
    conv = scipy.fft.irfft(scipy.fft.rfft(payload, size) * scipy.fft.rfft(excerpt[::-1], size), size)
    return conv[l - 1 : m]


def compute_threshold(
    correlation: np.ndarray,
    l_bytes: int,
    params: SystemParams,
    noise: NoiseModel | None = None,
    override: float | None = None,
) -> Threshold:
    """Adaptive threshold: K for the excerpt length times the signal's deviation."""
    if correlation.size < 2:
        raise NoSignalError("correlation signal too short to estimate a deviation")
    sigma = float(correlation.std(ddof=1))
    if sigma == 0.0:
        raise NoSignalError("correlation signal is constant")
    k = override if override is not None else select_threshold_coefficient(l_bytes, params, noise)
    return Threshold(k=k, t=k * sigma, sigma_c=sigma)


def detect_peaks(
    correlation: np.ndarray,
    threshold: Threshold,
    pad_start: int,
    merge_radius: int,
) -> np.ndarray:
    """Positions above threshold, merged within merge_radius keeping the max.

    Positions at or beyond pad_start begin inside reconstructed padding and
    are suppressed.
    """
    idx = np.flatnonzero(correlation > threshold.t)
    idx = idx[idx < pad_start]
    if idx.size == 0:
        return idx
    breaks = np.flatnonzero(np.diff(idx) > merge_radius)
    groups = np.split(idx, breaks + 1)
    return np.array([g[np.argmax(correlation[g])] for g in groups], dtype=np.int64)


class QueryEngine:
    """Runs queries against sealed archives, caching flow reconstructions.

    All parameters come from the archive headers. The optional noise model is
    only consulted for excerpt lengths outside the threshold table's range.
    """

    def __init__(
        self,
        archives: list[DigestArchive],
        noise: NoiseModel | None = None,
        wildcard_mode: str = "word",
        stats: QueryStats | None = None,
    ):
        check_archives_compatible(archives)
        self.archives = archives
        self.noise = noise
        self.wildcard_mode = wildcard_mode
        self.stats = stats if stats is not None else QueryStats()
        h = archives[0].header
        self.cfg = h.preprocess_config()
        self.chunk_len = h.chunk_len
        self.q = h.q
        self._recon: dict[tuple[int, int], ReconstructedSignal] = {}
        self._payload_fft: dict[tuple[int, int, int], np.ndarray] = {}

    def _params(self, l_bytes: int) -> SystemParams:
        return SystemParams(
            word_size=self.cfg.word_size,
            chunk_len=self.chunk_len,
            q=self.q,
            l_words=max(1, l_bytes // self.cfg.word_size),
        )

    def _reconstruction(self, ai: int, fi: int) -> ReconstructedSignal:
        key = (ai, fi)
        sig = self._recon.get(key)
        if sig is None:
            record = self.archives[ai].flows[fi]
            sig = reconstruct_flow_signal(self.archives[ai].digest_for(record), self.chunk_len, self.q)
            self._recon[key] = sig
        return sig

    def _correlate_all(self, ai: int, fi: int, signals) -> list[np.ndarray | None]:
        """Correlation rows for every alignment signal against one flow."""
        recon = self._reconstruction(ai, fi)
        payload = recon.samples
        m = payload.size
        lengths = [s.words.size for s in signals]
        l_max = max(lengths)
        if l_max > m:
            usable = [l for l in lengths if l <= m]
            if not usable:
                return [None] * len(signals)
        rows: list[np.ndarray | None] = [None] * len(signals)
        if m * l_max <= _FFT_MIN_WORK:
            for i, s in enumerate(signals):
                if lengths[i] <= m:
                    rows[i] = np.correlate(payload, s.words.astype(np.float64), mode="valid")
        else:
            size = scipy.fft.next_fast_len(m + l_max - 1)
            cache_key = (ai, fi, size)
            pf = self._payload_fft.get(cache_key)
            if pf is None:
                pf = scipy.fft.rfft(payload, size)
                self._payload_fft[cache_key] = pf
            kernel = np.zeros((len(signals), l_max))
            for i, s in enumerate(signals):
                kernel[i, l_max - lengths[i]:] = s.words.astype(np.float64)[::-1]
            conv = scipy.fft.irfft(pf[None, :] * scipy.fft.rfft(kernel, size, axis=1), size, axis=1)
            for i, l in enumerate(lengths):
                if l <= m:
                    rows[i] = conv[i, l_max - 1 : l_max - 1 + m - l + 1]
        return rows

    def run(
        self,
        query: Query,
        k_scale: float = 1.0,
    ) -> list[MatchResult]:
        """Attribute the query excerpt to carrier flows across the archives."""
        signals = preprocess_excerpt(query.excerpt, query.mask, self.cfg, self.wildcard_mode)
        w = self.cfg.word_size
        params = self._params(len(query.excerpt))
        if query.threshold_override is not None:
            k = query.threshold_override
        else:
            k = select_threshold_coefficient(len(query.excerpt), params, self.noise) * k_scale

        results: list[MatchResult] = []
        for ai, arch in enumerate(self.archives):
            pid = arch.header.period_id
            if query.period_range is not None and not (
                query.period_range[0] <= pid <= query.period_range[1]
            ):
                continue
            for fi, record in enumerate(arch.flows):
                self.stats.flows_considered += 1
                rows = self._correlate_all(ai, fi, signals)
                best: MatchResult | None = None
                for sig, row in zip(signals, rows):
                    if row is None:
                        self.stats.flows_skipped_short += 1
                        continue
                    self.stats.correlations_run += 1
                    self.stats.correlation_points += row.size
                    sigma = float(row.std(ddof=1)) if row.size > 1 else 0.0
                    self.stats.thresholds_computed += 1
                    if sigma == 0.0:
                        self.stats.flows_skipped_constant += 1
                        continue
                    thr = Threshold(k=k, t=k * sigma, sigma_c=sigma)
                    peaks = detect_peaks(row, thr, record.original_word_count, w)
                    self.stats.peak_candidates += peaks.size
                    for n in peaks:
                        est = max(0, int(n) * w - sig.alignment_offset)
                        cand = MatchResult(
                            key=record.key,
                            period_id=pid,
                            peak_position=est // w,
                            alignment_offset=est % w,
                            peak_value=float(row[n]),
                            threshold=thr,
                            estimated_byte_offset=est,
                        )
                        if best is None or cand.ratio > best.ratio:
                            best = cand
                if best is not None:
                    results.append(best)
        results.sort(key=lambda r: r.ratio, reverse=True)
        return results


def attribute_excerpt(
    query: Query,
    archives: list[DigestArchive],
    noise: NoiseModel | None = None,
    wildcard_mode: str = "word",
    stats: QueryStats | None = None,
) -> list[MatchResult]:
    """One-shot attribution; wildcard queries run in exactly one pass."""
    return QueryEngine(archives, noise, wildcard_mode, stats).run(query)


def find_similar(
    query: Query,
    archives: list[DigestArchive],
    mismatch_budget: float = 0.05,
    noise: NoiseModel | None = None,
    wildcard_mode: str = "word",
    stats: QueryStats | None = None,
) -> list[MatchResult]:
    """Attribution tolerant of a fraction of altered words in the carrier.

    Same machinery as attribute_excerpt; the threshold coefficient is lowered
    by the corruption adjustment so weakened peaks still clear it. An explicit
    threshold_override is used as given.
    """
    scale = corruption_threshold_factor(mismatch_budget)
    return QueryEngine(archives, noise, wildcard_mode, stats).run(query, k_scale=scale)
