class SfcError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(SfcError, ValueError):
    """Malformed input file. Carries the 1-based location when known."""

    def __init__(self, message, line=None, column=None, expected=None):
        self.line = line
        self.column = column
        self.expected = expected
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        tail = f" (expected {expected})" if expected else ""
        super().__init__(f"{where}{message}{tail}")


class DuplicateRuleError(SfcError, ValueError):
    pass


class UnstableError(SfcError, ValueError):
    """Utilization >= 1; steady-state metrics do not exist."""


class InfeasibleError(SfcError, ValueError):
    """Ordering constraints cannot all be satisfied."""


class ConsistencyError(SfcError, ArithmeticError):
    pass


class FixtureCorrupted(SfcError):
    pass
