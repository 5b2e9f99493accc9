from __future__ import annotations


class TextRobustError(Exception):
    """Base class for every error raised by this package."""


class ParseError(TextRobustError, ValueError):
    def __init__(self, message: str, path=None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class OOVError(TextRobustError, KeyError):
    """Token is not in the embedding vocabulary."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "token not in vocabulary"


class IndexMismatchError(TextRobustError):
    """Serialized index was built from a different embedding store."""


class DatasetError(TextRobustError, ValueError):
    pass


class ConfigError(TextRobustError, ValueError):
    pass


class UndefinedBaselineError(TextRobustError, ZeroDivisionError):
    """Relative difference requested against a zero clean error rate."""


class TrainingDivergedError(TextRobustError, FloatingPointError):
    pass
