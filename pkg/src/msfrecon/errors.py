"""Exception hierarchy shared by the library and the command-line tool."""


class MsfreconError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ContractViolation(MsfreconError, ValueError):
    """An operation was called with arguments outside its contract."""

    exit_code = 3


class ConfigurationError(MsfreconError, ValueError):
    exit_code = 2


class DataError(MsfreconError):
    exit_code = 3


class NumericFailure(MsfreconError, RuntimeError):
    exit_code = 4
