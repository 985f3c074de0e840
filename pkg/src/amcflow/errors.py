"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: configuration errors exit 2,
provider errors exit 3, dataset errors exit 4. Invariant violations are
programming/contract errors and are never mapped to a friendly code.
"""


class AmcflowError(Exception):
    """Base class for all package-specific errors."""


class InvariantViolation(AmcflowError):
    """A mathematical contract was broken (bad matrix shape, row sums, ...)."""


class ConfigurationError(AmcflowError):
    """Invalid user-supplied configuration or parameter value."""


class ProviderError(AmcflowError):
    """A next-token probability source failed or returned invalid data."""


class DatasetError(AmcflowError):
    """A dataset file could not be parsed or violates its schema."""


class GenerationAborted(ProviderError):
    """Generation stopped early because the provider failed mid-sequence.

    Carries the steps completed so far in ``partial_trace``.
    """

    def __init__(self, message, partial_trace=None):
        super().__init__(message)
        self.partial_trace = partial_trace
