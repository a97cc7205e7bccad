"""Exception types raised across the package."""


class CrackleError(Exception):
    """Base class for all errors raised by this package."""


class NonIntegrable(CrackleError):
    pass


class QuadratureFailure(CrackleError):
    pass


class NoRoot(CrackleError):
    pass


class BudgetExceeded(CrackleError):
    pass


class InsufficientDim(CrackleError):
    pass


class TooLarge(CrackleError):
    pass


class Unsupported(CrackleError):
    pass


class InsufficientSamples(CrackleError):
    pass


class DegenerateTest(CrackleError):
    pass


class EmptyRegion(CrackleError):
    pass


class InsufficientSpread(CrackleError):
    pass


class ConfigError(CrackleError):
    """Bad or unparseable run configuration (CLI exit code 2)."""


class ParseError(ConfigError):
    def __init__(self, path, row, message):
        super().__init__(f"{path}: row {row}: {message}")
        self.path = path
        self.row = row
