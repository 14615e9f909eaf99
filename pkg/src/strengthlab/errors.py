"""Exception hierarchy shared by all strengthlab modules."""


class StrengthLabError(Exception):
    """Base class for every error raised by this package."""


class SchemaError(StrengthLabError):
    def __init__(self, column):
        super().__init__(f"missing column: {column!r}")
        self.column = column


class ParseError(StrengthLabError):
    def __init__(self, row, col, text=""):
        super().__init__(f"cannot parse {text!r} as a finite real at row {row}, column {col!r}")
        self.row = row
        self.col = col


class EmptyDataError(StrengthLabError):
    pass


class InsufficientDataError(StrengthLabError):
    pass


class InvalidStatsError(StrengthLabError):
    pass


class ShapeError(StrengthLabError):
    pass


class ConfigError(StrengthLabError):
    pass


class DegenerateLeafError(StrengthLabError):
    pass


class DivergenceError(StrengthLabError):
    def __init__(self, epoch, message=""):
        super().__init__(message or f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


class UndefinedMetricError(StrengthLabError):
    """Raised when a metric is undefined; ``partial`` holds what could be computed."""

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class UnsupportedModelError(StrengthLabError):
    pass


class TooManyFeaturesError(StrengthLabError):
    pass


class SearchFailedError(StrengthLabError):
    def __init__(self, message, diagnostics=()):
        super().__init__(message)
        self.diagnostics = list(diagnostics)


class FoldError(StrengthLabError):
    def __init__(self, fold, cause):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold
        self.cause = cause


class UnknownFeatureError(StrengthLabError, NameError, KeyError):
    def __init__(self, name):
        super().__init__(f"unknown feature: {name!r}")
        self.name = name

    def __str__(self):
        return self.args[0]
