"""Exception types shared across the package."""


class SpinBosonError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(SpinBosonError, ValueError):
    """A physical or numerical parameter is outside its allowed range."""


class ConfigError(InvalidParameterError):
    """A run-configuration document failed validation.

    ``field`` holds the dotted path of the offending entry when known.
    """

    def __init__(self, message: str, field: str | None = None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class QuadratureError(SpinBosonError):
    """A spectral-density bin integral failed to converge."""

    def __init__(self, message: str, bin_index: int | None = None):
        super().__init__(message)
        self.bin_index = bin_index


class CapacityError(SpinBosonError):
    """Requested problem size exceeds a configured cap."""


class SingularityError(SpinBosonError):
    """A variational linear system is rank deficient beyond repair."""

    def __init__(self, message: str, condition: float | None = None,
                 t: float | None = None):
        super().__init__(message)
        self.condition = condition
        self.t = t


class StiffnessError(SpinBosonError):
    """Adaptive step size underflowed; carries the time reached."""

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class InconsistentStateError(SpinBosonError):
    """Observables violate a structural bound (e.g. Bloch length > 1)."""


class MatrixElementError(SpinBosonError):
    """Self-check of analytic matrix elements failed; indicates a bug."""


class NormalizerDegenerateError(SpinBosonError):
    """The relative-deviation normalizer (mean bath energy) is zero."""


class CutoffError(SpinBosonError):
    """Fock-space truncation leaks population beyond tolerance."""

    def __init__(self, message: str, n_max: int | None = None):
        super().__init__(message)
        self.n_max = n_max


class FitError(SpinBosonError):
    """An exponential fit was rejected or did not converge.

    ``residual`` holds (times, residual values) when available.
    """

    def __init__(self, message: str, residual=None):
        super().__init__(message)
        self.residual = residual


class InsufficientDataError(SpinBosonError):
    """Too few data points for the requested fit."""


class ExtrapolationError(SpinBosonError):
    """Crossover-gap extrapolation is undefined for the given data."""


class ParseError(SpinBosonError):
    """A data file is malformed; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NumericError(SpinBosonError):
    """A runtime numeric invariant (trace, convergence) was violated."""
