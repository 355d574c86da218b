"""Exception types raised by the package.

Every error carries enough context to locate the offending input; the CLI maps
each class to its own exit code.
"""


class TemporalWaveletError(Exception):
    """Base class for all package errors."""


class ParseError(TemporalWaveletError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class RangeError(TemporalWaveletError, IndexError):
    pass


class ConsistencyError(TemporalWaveletError):
    pass


class DomainError(TemporalWaveletError, ValueError):
    pass


class DegenerateDegreeError(TemporalWaveletError):
    def __init__(self, node, layer):
        self.node = node
        self.layer = layer
        super().__init__(
            f"node {node} in layer {layer} has zero multilayer degree; "
            "remove it or add couplings before building the supra-Laplacian"
        )


class PreconditionError(TemporalWaveletError):
    pass


class SolverError(TemporalWaveletError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class ParameterError(TemporalWaveletError, ValueError):
    pass


class StageError(TemporalWaveletError):
    """Wraps an error raised inside one stage of the detection pipeline."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
