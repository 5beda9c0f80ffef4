"""Exception hierarchy for radarseg."""


class RadarSegError(Exception):
    """Base class for every error raised by radarseg."""


class MalformedFrameError(RadarSegError, ValueError):
    """A frame violates its structural invariants (e.g. a dangling track reference)."""

    def __init__(self, message, frame_id=None, point_index=None):
        super().__init__(message)
        self.frame_id = frame_id
        self.point_index = point_index


class SingularCovarianceError(RadarSegError, ValueError):
    """A covariance matrix could not be Cholesky-factorized."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class ComponentCollapseError(RadarSegError):
    """A mixture component received (numerically) zero responsibility mass."""

    def __init__(self, component, mass):
        super().__init__(
            f"component {component} collapsed (responsibility mass {mass:.3g})"
        )
        self.component = component
        self.mass = mass


class InsufficientDataError(RadarSegError, ValueError):
    pass


class FitFailureError(RadarSegError):
    """EM could not produce a valid model after all reinitialization attempts."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InvalidThresholdError(RadarSegError, ValueError):
    pass


class UnsupportedKError(RadarSegError, ValueError):
    pass


class SceneConfigError(RadarSegError, ValueError):
    pass


class FrameParseError(RadarSegError, ValueError):
    """Raised while reading frame JSONL or truth CSV input."""

    def __init__(self, message, line=None, field=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)
        self.line = line
        self.field = field


class ModelFormatError(RadarSegError, ValueError):
    """A persisted model is corrupt, from another version, or violates invariants."""
