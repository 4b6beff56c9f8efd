"""Exception hierarchy shared by every module."""


class InfluxError(Exception):
    """Base class for all errors raised by the package."""


class DegenerateGroup(InfluxError):
    """A round has fewer than two present opinions, so the group mean is undefined."""


class InvalidSpec(InfluxError):
    pass


class ParseError(InfluxError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SchemaError(InfluxError):
    """One or more rows violate the dataset schema.

    ``diagnostics`` holds one ``(line, message)`` tuple per offending row.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        shown = "; ".join(f"line {ln}: {msg}" for ln, msg in self.diagnostics[:5])
        more = len(self.diagnostics) - 5
        if more > 0:
            shown += f" (+{more} more)"
        super().__init__(shown)


class MixedTaskError(InfluxError):
    pass


class InsufficientData(InfluxError):
    pass


class DegenerateCorrelation(InsufficientData):
    pass


class DegenerateMAD(InfluxError):
    pass


class DegenerateFit(InfluxError):
    """Sum of squared distances to the mean is below the identifiability floor.

    The conventional fallback slope is carried in ``alpha`` (always 0.0).
    """

    alpha = 0.0


class TooFewCouples(InfluxError):
    pass


class NoTrainingData(InfluxError):
    pass


class MissingModel(InfluxError):
    pass


class InsufficientGames(InfluxError):
    pass


class IncompleteBaseGame(InfluxError):
    pass


class InfeasibleSchedule(InfluxError):
    pass


class UnidentifiableLambda(InfluxError):
    lambda_ = 0.0


class NoData(InfluxError):
    pass


class SingularControls(InfluxError):
    pass


class ConfigError(InfluxError):
    pass
