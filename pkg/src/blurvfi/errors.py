"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical aborts with 3.
"""


class BlurVFIError(Exception):
    """Base class for all package errors."""


class ConfigError(BlurVFIError, ValueError):
    """Invalid configuration (bad scale, channel mismatch, unknown keys)."""


class InputError(BlurVFIError, ValueError):
    """Input data rejected (out-of-bounds window, too few frames, bad shapes)."""


class ContractError(BlurVFIError, RuntimeError):
    """A caller broke an internal contract (missing state, mismatched pairs)."""


class NumericalAbort(BlurVFIError, FloatingPointError):
    """Non-finite loss or gradient encountered during training."""
