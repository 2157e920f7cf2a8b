"""Exception hierarchy shared by all picosync modules."""


class PicosyncError(Exception):
    """Base class. ``code`` is the machine-readable tag printed by the CLI."""

    code = "error"


class InvalidDuration(PicosyncError, ValueError):
    code = "invalid-duration"


class DegenerateGrid(PicosyncError, ValueError):
    code = "degenerate-grid"


class InvalidParameter(PicosyncError, ValueError):
    code = "invalid-parameter"


class InvalidProbability(PicosyncError, ValueError):
    code = "invalid-probability"


class OutOfRange(PicosyncError, ValueError):
    code = "out-of-range"


class SearchExhausted(PicosyncError):
    """No window crossed threshold within the pulse budget."""

    code = "search-exhausted"

    def __init__(self, message, pulses_used=0):
        super().__init__(message)
        self.pulses_used = pulses_used


class AmbiguousRefinement(PicosyncError):
    """No subinterval plateau rose above the noise floor."""

    code = "ambiguous-refinement"

    def __init__(self, message, pulses_used=0):
        super().__init__(message)
        self.pulses_used = pulses_used


class FineAdjustFailed(PicosyncError):
    code = "fine-adjust-failed"


class SyncFailed(PicosyncError):
    code = "sync-failed"

    def __init__(self, message, outcome=None):
        super().__init__(message)
        self.outcome = outcome


class ConfigurationError(PicosyncError, ValueError):
    """Inconsistent parameters detected at run time (e.g. unequal periods)."""

    code = "configuration-error"


class ConfigParseError(ConfigurationError):
    code = "parse-error"


class ConfigValidationError(ConfigurationError):
    code = "validation-error"


class UnreachableTarget(PicosyncError):
    code = "unreachable-target"
