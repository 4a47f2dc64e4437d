"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration/input/data problems exit
with 2, anything that blows up mid-pipeline exits with 3.
"""


class DelayfbError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(DelayfbError):
    """Invalid or missing configuration (bad ranges, missing keys, shape mismatches)."""


class InputError(DelayfbError):
    """Malformed operation input (wrong lengths, out-of-range values, empty batches)."""


class DataError(DelayfbError):
    """Inconsistent dataset contents (e.g. a sample without an oracle label)."""


class NumericError(DelayfbError):
    """Non-finite values encountered during numerical work; training aborts."""


class MetricUndefinedError(DelayfbError):
    """A metric has no defined value for this input (single-class AUC, zero RI denominator)."""


class PipelineError(DelayfbError):
    """A stage of the experiment pipeline failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
