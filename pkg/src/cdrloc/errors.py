"""Exception hierarchy shared across the package."""


class CdrlocError(Exception):
    """Base class for all errors raised by cdrloc."""


class OutOfProjectionRange(CdrlocError, ValueError):
    pass


class DegeneratePolygon(CdrlocError, ValueError):
    pass


class InvalidGeometry(CdrlocError, ValueError):
    pass


class InvalidPolygon(InvalidGeometry):
    pass


class EmptyInput(CdrlocError, ValueError):
    pass


class MalformedRow(CdrlocError, ValueError):
    """A CSV row could not be parsed. ``line_no`` is 1-based, header is line 1."""

    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateCellId(CdrlocError, ValueError):
    pass


class MissingProperty(CdrlocError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing property"


class UnknownCell(CdrlocError, KeyError):
    def __str__(self):
        return f"unknown cell id: {self.args[0]!r}" if self.args else "unknown cell"


class NonFiniteEncountered(CdrlocError, FloatingPointError):
    pass


class NonFiniteState(CdrlocError, FloatingPointError):
    pass


class SingularInnovation(CdrlocError, ArithmeticError):
    pass


class InsufficientData(CdrlocError, ValueError):
    pass


class MissingVariant(CdrlocError, KeyError):
    def __str__(self):
        return f"missing pipeline variant: {self.args[0]!r}" if self.args else "missing variant"


class ConfigError(CdrlocError, ValueError):
    """Invalid configuration; ``path`` is the dotted field path."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason
