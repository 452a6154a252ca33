"""dspas: transform-coded payload attribution for network forensics.

Digest captured traffic flows into compact, privacy-preserving archives of
quantized transform coefficients, then attribute payload excerpts (including
wildcard and similar-string queries) to carrier flows by correlation peak
detection, with an analytical model of the error rates.
"""

from .archive import DigestArchive, FlowRecord, list_flows, read_archive, write_archive
from .codec import (
    DEFAULT_CHUNK_LEN,
    DEFAULT_QUANT_BITS,
    FlowDigest,
    data_reduction_ratio,
    dct_forward,
    dct_inverse,
    dequantize,
    digest_signal,
    entropy_decode,
    entropy_encode,
    quantize,
    reconstruct_signal,
)
from .errors import (
    CalibrationError,
    CaptureError,
    ChecksumError,
    DspasError,
    IntegrityError,
    NoSignalError,
    ParameterMismatchError,
    QueryTooShortError,
    ThresholdInfeasibleError,
)
from .flows import CapturePeriod, FlowAssembler, FlowKey, FlowPayload, Protocol, bucket_periods, reassemble_flow
from .preprocess import (
    DEFAULT_HASH_SEED,
    PreprocessConfig,
    WildcardMask,
    WordSignal,
    pad_chunk,
    preprocess_excerpt,
    preprocess_payload,
    strip_repetitive_runs,
    window_hash,
)
from .query import (
    MatchResult,
    Query,
    QueryEngine,
    QueryStats,
    Threshold,
    attribute_excerpt,
    compute_threshold,
    correlate,
    detect_peaks,
    find_similar,
    reconstruct_flow_signal,
)
from .theory import (
    CalibrationResult,
    NoiseModel,
    SystemParams,
    calibrate_noise,
    correlation_stats,
    fn_probability,
    fp_probability,
    q_function,
    select_threshold_coefficient,
)

__version__ = "0.1.0"
