"""Exception hierarchy shared across the package.

Errors split into three families so the CLI can map them onto distinct
exit codes: user/configuration mistakes, violated call contracts, and
numeric failures occurring inside otherwise valid computations.
"""


class ContractViolation(ValueError):
    """An argument broke a documented precondition (shape, range, layout)."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or left its valid domain."""


class DivergenceError(NumericError):
    """A simulated trajectory escaped the admissible region.

    Carries the step index at which the escape was detected.
    """

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class ConfigError(ValueError):
    """Bad user input: flags, config files, missing artifacts."""
