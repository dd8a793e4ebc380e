"""Exception types raised by the engine.

User-facing commands map HikeyError subclasses to exit code 1 and anything
else to exit code 2.
"""


class HikeyError(Exception):
    """Base class for all engine errors."""


class EmptyDocument(HikeyError):
    pass


class DuplicateBlock(HikeyError):
    pass


class UnknownNode(HikeyError):
    pass


class MissingEmbedding(HikeyError):
    def __init__(self, key: str):
        super().__init__(f"no embedding stored for key: {key!r}")
        self.key = key


class DimensionMismatch(HikeyError):
    pass


class UnknownId(HikeyError):
    pass


class EmptyScoreTable(HikeyError):
    pass


class EmptyCorpus(HikeyError):
    pass


class ScorelessUnit(HikeyError):
    pass


class InvalidBudget(HikeyError):
    pass


class ParseError(HikeyError):
    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class MissingIndex(HikeyError):
    pass


class ConfigError(HikeyError):
    pass
