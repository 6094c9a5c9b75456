"""Exception hierarchy shared by all modules."""


class SereError(Exception):
    """Base class for every error raised by the package."""


class FormatError(SereError, ValueError):
    """Malformed container or file header."""


class UnsupportedFormatError(SereError, ValueError):
    """Well-formed input using a codec or layout we do not decode."""


class PreconditionError(SereError, ValueError):
    pass


class ShapeError(SereError, ValueError):
    pass


class MissingClassError(SereError, ValueError):
    pass


class PairingError(SereError, ValueError):
    pass


class StratificationError(SereError, ValueError):
    pass


class ValidationError(SereError, ValueError):
    """Non-finite or otherwise invalid numeric payload."""


class EmbeddingImportError(SereError, ValueError):
    pass


class CompatibilityError(SereError, ValueError):
    pass


class ProjectionError(SereError, ValueError):
    pass


class ParseError(SereError, ValueError):
    """Manifest or config problem; ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class DivergenceError(SereError, ArithmeticError):
    def __init__(self, epoch, value):
        self.epoch = epoch
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}")
