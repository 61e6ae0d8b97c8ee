"""Exception hierarchy shared across the pipeline.

Three top-level families map onto the CLI exit codes: configuration
problems (exit 2), data problems (exit 3), and numeric failures (exit 4).
"""


class DnsEmbedError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(DnsEmbedError):
    """Invalid configuration value, missing input file, or bad CLI usage."""

    exit_code = 2


class DataError(DnsEmbedError):
    """Malformed, inconsistent, or degenerate input data."""

    exit_code = 3


class FormatError(DataError):
    """Input file does not match the declared format (e.g. wrong field order)."""


class ConsistencyError(DataError):
    """Cross-references between inputs do not line up (log vs. catalog, labels)."""


class DegenerateInputError(DataError):
    """Structurally valid input on which the operation is undefined
    (all-zero counts, zero-degree node, single-class labels, ...)."""


class StateError(DataError):
    """Operation requires model state that has not been fitted/set."""


class NumericError(DnsEmbedError):
    """Numerical failure: divergence, non-convergence, non-finite values."""

    exit_code = 4
