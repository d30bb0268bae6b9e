"""Exception hierarchy shared by every HCT module.

Each class carries a short ``category`` used by the CLI for its one-line,
machine-parsable error output.
"""


class HctError(Exception):
    category = "error"


class ShapeError(HctError, ValueError):
    category = "shape"


class ConfigError(HctError, ValueError):
    category = "config"


class FormatError(HctError, ValueError):
    category = "format"


class ValidationError(HctError, ValueError):
    category = "validation"


class ContractError(HctError, ValueError):
    category = "contract"


class TaskMismatchError(ContractError):
    category = "task-mismatch"


class OracleError(HctError, ArithmeticError):
    category = "oracle"


class NumericError(HctError, ArithmeticError):
    category = "numeric"


class FoldRangeError(HctError, IndexError):
    category = "range"
