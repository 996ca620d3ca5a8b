"""Exception hierarchy shared by every module.

Each error carries the name of the module that raised it so the CLI can
report provenance, and maps onto a stable process exit status.
"""


class FantfError(Exception):
    module = "fantf"
    exit_status = 1

    def __init__(self, message, module=None):
        super().__init__(message)
        if module is not None:
            self.module = module


class ContractError(FantfError):
    """A documented precondition was violated by the caller."""

    exit_status = 2


class ConfigError(ContractError):
    module = "cli"


class DimensionError(ContractError, ValueError):
    module = "tensor_core"


class ParameterError(ContractError, ValueError):
    module = "fuzziness"


class DataError(FantfError):
    module = "data"
    exit_status = 3


class ParseError(DataError):
    def __init__(self, message, line=None, module=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, module)
        self.line = line


class NumericError(FantfError, ArithmeticError):
    module = "tensor_core"
    exit_status = 4


class UndefinedMetricError(NumericError):
    module = "metrics"
