"""Exception hierarchy shared by every rydcav module."""


class RydcavError(Exception):
    """Base class for all rydcav errors."""


class SingularSystem(RydcavError):
    """The steady-state linear system has more than one null vector."""


class NonConverged(RydcavError):
    """Velocity quadrature failed to converge under refinement."""


class InvalidCoherence(RydcavError):
    """Probe coherence implies gain in a passive medium."""


class LossTooHigh(RydcavError):
    """Round-trip amplitude too small for the finesse formula to mean anything."""

    def __init__(self, round_trip, message=None):
        self.round_trip = round_trip
        super().__init__(message or f"round-trip amplitude factor a={round_trip:.6g} <= 0.5")


class LosslessCavity(RydcavError):
    """Round-trip amplitude factor of exactly one: finesse diverges."""


class FitDiverged(RydcavError):
    """Nonlinear least squares produced NaN or could not reduce the cost."""


class DegenerateDoublet(RydcavError):
    """Spectrum does not contain two resolvable peaks."""


class ApproximationInvalid(RydcavError):
    """Beat frequency too fast for the quasi-static small-signal model."""


class DurationTooShort(RydcavError):
    """Trace shorter than the analysis window required by the RBW."""


class SignalOutOfRange(RydcavError):
    """Requested signal frequency lies outside the analysed band."""


class NoInteriorMax(RydcavError):
    """Sweep maximum sits on the grid boundary."""


class LinearRegionNotFound(RydcavError):
    """Fewer than four consecutive points follow a unit log-log slope."""


class ConfigError(RydcavError):
    """Malformed or incomplete scenario file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path:
            where += f"{path}"
        if line is not None:
            where += f" (line {line})"
        super().__init__(f"{where}: {message}" if where else message)


class DataFormatError(RydcavError):
    """Malformed measured-data file."""

    def __init__(self, message, path=None, row=None):
        self.path = path
        self.row = row
        where = f"{path}" if path else ""
        if row is not None:
            where += f" (row {row})"
        super().__init__(f"{where}: {message}" if where else message)
