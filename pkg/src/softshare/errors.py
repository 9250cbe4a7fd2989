"""Exception hierarchy shared across the toolkit.

The CLI maps these to process exit codes: configuration problems exit 2,
data/format problems exit 3, numeric failures exit 4.
"""


class SoftShareError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(SoftShareError):
    """Invalid configuration, dimensions, or arguments."""


class DataFormatError(SoftShareError):
    """Malformed or truncated input data (IDX files, checkpoints, blobs)."""


class DecodeError(DataFormatError):
    """Corrupt encoded stream; carries a position where decoding failed."""


class NumericError(SoftShareError):
    """Non-finite or out-of-domain numeric result."""


class DivergenceError(NumericError):
    """Training diverged; carries the last finite network and mixture.

    Attributes:
        network: deep copy of the model at the end of the last finite epoch.
        mixture: matching mixture state.
        trace: epoch trace rows collected up to the failure.
    """

    def __init__(self, message, network=None, mixture=None, trace=None):
        super().__init__(message)
        self.network = network
        self.mixture = mixture
        self.trace = trace
