from __future__ import annotations


class IntermedError(Exception):
    """Base class for every failure the CLI reports with a structured message."""

    exit_code: int = 1


class ConfigError(IntermedError):
    exit_code = 2


class DataError(IntermedError):
    exit_code = 3


# --- configuration ---------------------------------------------------------


class UnknownConfigKey(ConfigError):
    def __init__(self, key: str):
        super().__init__(f"unknown config key {key!r}")
        self.key = key


class InvalidConfig(ConfigError):
    pass


class EmptyMediatorSet(ConfigError):
    def __init__(self) -> None:
        super().__init__("at least one mediator column (m) is required")


class OverlappingRoles(ConfigError):
    pass


class MissingSiteRole(ConfigError):
    def __init__(self) -> None:
        super().__init__("transported family requires a site column (s)")


class BadFoldCount(ConfigError):
    def __init__(self, n: int, j: int):
        super().__init__(f"fold count must satisfy 2 <= J <= n, got J={j}, n={n}")
        self.n = n
        self.j = j


class SaturationOnContinuous(ConfigError):
    pass


class UnknownDgm(ConfigError):
    pass


class UnknownLearner(ConfigError):
    pass


# --- data ------------------------------------------------------------------


class MalformedCsv(DataError):
    def __init__(self, path: str, reason: str):
        super().__init__(f"cannot parse {path}: {reason}")
        self.path = path


class MissingColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"column {column!r} not found in data")
        self.column = column


class NonNumericColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"column {column!r} is not numeric")
        self.column = column


class NonBinaryTreatment(DataError):
    def __init__(self, column: str, value: float):
        super().__init__(f"treatment column {column!r} must be 0/1, found {value:g}")
        self.column = column
        self.value = value


class NonBinarySite(DataError):
    def __init__(self, column: str, value: float):
        super().__init__(f"site column {column!r} must be 0/1, found {value:g}")
        self.column = column
        self.value = value


class MissingValue(DataError):
    def __init__(self, column: str, row: int):
        super().__init__(f"missing value in column {column!r} at row {row}")
        self.column = column
        self.row = row


class DegenerateOutcome(DataError):
    def __init__(self) -> None:
        super().__init__("outcome has fewer than two distinct observed values")


class EmptyTrainingSubset(DataError):
    def __init__(self, target: str, fold: int):
        super().__init__(f"no training rows left for {target!r} when holding out fold {fold}")
        self.target = target
        self.fold = fold


class ArityMismatch(DataError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"model expects {expected} input columns, got {got}")
        self.expected = expected
        self.got = got


class NonConvergenceWarning(UserWarning):
    pass
