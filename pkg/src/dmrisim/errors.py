"""Exception hierarchy shared by all stages of the simulation pipeline."""


class DmriError(Exception):
    """Base class for every error raised by dmrisim."""


# geometry
class GeometryError(DmriError):
    pass


class PlacementExhausted(GeometryError):
    pass


class UnsupportedEcs(GeometryError):
    pass


class GeometryFailure(GeometryError):
    pass


# mesh
class MeshError(DmriError):
    pass


class ParseError(DmriError, ValueError):
    """Malformed text input (mesh files or run configuration)."""

    def __init__(self, message, line=None, key=None):
        self.line = line
        self.key = key
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class MeshIndexError(MeshError, IndexError):
    pass


class OrientationError(MeshError):
    pass


class UnsupportedShape(MeshError):
    pass


class TopologyError(MeshError):
    pass


class MesherNotFound(MeshError):
    pass


class MesherFailed(MeshError):
    def __init__(self, message, diagnostics=""):
        self.diagnostics = diagnostics
        super().__init__(message)


# assembly
class DegenerateTet(MeshError):
    pass


class MissingPair(MeshError):
    pass


# sequences
class OutOfRange(DmriError, ValueError):
    pass


class ZeroVector(DmriError, ValueError):
    pass


# solvers
class SolverError(DmriError):
    pass


class StepLimitExceeded(SolverError):
    pass


class SingularSystem(SolverError):
    pass


# analysis
class AnalysisError(DmriError, ValueError):
    pass


class NonPositiveSignal(AnalysisError):
    pass


class InsufficientPoints(AnalysisError):
    pass


class ZeroReference(AnalysisError):
    pass


# oracles
class OracleError(DmriError):
    pass


class RootBracketFailure(OracleError):
    pass


class NotConverged(OracleError):
    pass


# configuration
class ConfigError(DmriError):
    pass


class ValidationError(ConfigError, ValueError):
    """Well-formed input with inconsistent or out-of-range values."""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message if key is None else f"{message} (key {key!r})")
