"""Exception types shared across the package."""


class DspasError(Exception):
    """Base class for all dspas errors."""


class CaptureError(DspasError):
    """The packet capture file cannot be read at all (bad magic, truncated header)."""


class IntegrityError(DspasError):
    """A stored digest artifact failed validation."""


class BadMagicError(IntegrityError):
    """File does not start with the archive magic."""


class UnsupportedVersionError(IntegrityError):
    """Archive format version is not supported by this reader."""


class ChecksumError(IntegrityError):
    """Whole-file checksum trailer does not match the file contents."""


class TruncatedArchiveError(IntegrityError):
    """File is too short to contain the structures its header promises."""


class CodecError(IntegrityError):
    """An entropy-coded stream is corrupt or uses an unknown codec id."""


class ParameterMismatchError(DspasError):
    """System parameters disagree between an archive and the caller (or between archives)."""


class QueryTooShortError(DspasError):
    """Excerpt is too short to survive preprocessing at every alignment."""


class NoSignalError(DspasError):
    """A correlation signal is constant, so no threshold can be formed for it."""


class CalibrationError(DspasError):
    """Noise calibration corpus does not meet the minimum size requirement."""


class ThresholdInfeasibleError(DspasError):
    """No threshold coefficient satisfies both error-rate targets.

    Carries the best achievable operating point so the caller can decide
    whether to proceed with an explicit override.
    """

    def __init__(self, message: str, k: float, achievable_fp: float, achievable_fn: float):
        super().__init__(message)
        self.k = k
        self.achievable_fp = achievable_fp
        self.achievable_fn = achievable_fn
