"""Exception hierarchy shared by all modules."""


class LorentzGasError(Exception):
    """Base class for every error raised by this package."""


class ParamError(LorentzGasError, ValueError):
    """Invalid scaling parameters."""


class OutOfRange(ParamError):
    """epsilon or nu outside the admissible open intervals."""


class RangeOverflow(ParamError):
    """The obstacle range does not fit inside one lattice cell."""


class NoEntry(LorentzGasError, ValueError):
    """A ray does not enter the requested cell."""


class NotIncoming(LorentzGasError, ValueError):
    """Velocity is not directed into the obstacle at the impact point."""


class StepLimit(LorentzGasError, RuntimeError):
    """A single trajectory exceeded the collision budget."""


class Inconsistent(LorentzGasError, RuntimeError):
    """Replaying a trajectory did not reproduce its stored events."""


class DegenerateCell(LorentzGasError, ValueError):
    """A single-passage collision probability reached 1."""


class Empty(LorentzGasError, ValueError):
    """An estimator received no samples."""


class GridMismatch(LorentzGasError, ValueError):
    """Two histograms are defined on different grids."""


class HorizonMismatch(LorentzGasError, ValueError):
    """Two trajectories have different final times."""


class ParseError(LorentzGasError, ValueError):
    """Malformed configuration text."""

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class ValidationError(LorentzGasError, ValueError):
    """Configuration violates one or more constraints."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class TruncationWarning(UserWarning):
    """Fourier series truncation error is not negligible."""


class QuadratureWarning(UserWarning):
    """Quadrature error estimate exceeds the requested tolerance."""
