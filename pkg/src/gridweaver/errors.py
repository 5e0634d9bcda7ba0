"""Exception hierarchy. Everything a user can cause derives from GridweaverError."""


class GridweaverError(Exception):
    """Base class for user-facing errors (CLI exit code 1)."""


class ConfigError(GridweaverError):
    pass


class ParseError(GridweaverError):
    """Malformed input document.

    ``feature_index`` or ``line`` locate the offending item when known.
    """

    def __init__(self, message, feature_index=None, line=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if feature_index is not None:
            where.append(f"feature {feature_index}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.feature_index = feature_index
        self.line = line


class SchemaError(GridweaverError):
    pass


class NetworkError(GridweaverError):
    pass


class ClusteringError(GridweaverError):
    pass


class GeometryError(GridweaverError):
    pass


class ProblemError(GridweaverError):
    """Inconsistent inputs to the expansion problem builder."""


class SolverError(GridweaverError):
    pass


class PrerequisiteError(GridweaverError):
    pass
