"""Exception hierarchy.

Each leaf carries the process exit code the CLI maps it to:
2 for configuration problems, 3 for I/O and input-format problems,
4 for numerical or sampling failures.
"""


class CprError(Exception):
    exit_code = 1


class ConfigError(CprError):
    exit_code = 2


class UnknownKey(ConfigError):
    def __init__(self, key: str):
        super().__init__(f"unknown config key: {key!r}")
        self.key = key


class TypeMismatch(ConfigError):
    pass


class MissingRequired(ConfigError):
    pass


class InvalidParameter(ConfigError, ValueError):
    pass


class DataError(CprError):
    exit_code = 3


class EmptyDataset(DataError):
    pass


class MalformedLine(DataError):
    def __init__(self, lineno: int, line: str, reason: str = "expected user and item fields"):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


class BadFileFormat(DataError):
    pass


class IndexOutOfRange(CprError, IndexError):
    exit_code = 4


class GroupCountTooLarge(CprError, ValueError):
    exit_code = 2


class NumericError(CprError):
    exit_code = 4


class NonFiniteLoss(NumericError):
    pass


class ExhaustedRetries(NumericError):
    pass


class AllEmpty(NumericError):
    pass
