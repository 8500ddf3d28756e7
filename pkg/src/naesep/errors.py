"""Exception hierarchy shared by every naesep module."""


class NaesepError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(NaesepError, ValueError):
    """A caller violated a documented precondition (bad lengths, silent
    reference, mismatched sample rates, ...)."""


class DimensionError(ContractError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(NaesepError, ValueError):
    """A configuration object holds inconsistent or out-of-range values."""


class DivergenceError(NaesepError, RuntimeError):
    """Optimization produced a non-finite loss or gradient."""


class WavFormatError(NaesepError, ValueError):
    """A WAV file is malformed (truncated or not RIFF/WAVE at all)."""


class UnsupportedWavError(WavFormatError):
    """A WAV file is well-formed but uses an encoding we do not read
    (compressed, float, or sample widths other than 16-bit PCM)."""


class CheckpointError(NaesepError, ValueError):
    """Base class for model checkpoint problems."""


class CheckpointFormatError(CheckpointError):
    """Checkpoint bytes are corrupt or truncated; message carries the
    byte offset where parsing failed."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""
