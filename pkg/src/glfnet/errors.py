"""Exception hierarchy shared by every module in the package."""


class GLFNetError(Exception):
    """Base class for all package errors."""


class ShapeError(GLFNetError, ValueError):
    pass


class NumericsError(GLFNetError, FloatingPointError):
    pass


class ContractError(GLFNetError, ValueError):
    """A caller violated an operation's precondition (e.g. non-scalar loss)."""


class ConfigError(GLFNetError, ValueError):
    pass


class DataError(GLFNetError, ValueError):
    pass


class FormatError(GLFNetError, ValueError):
    """Malformed tensor, dataset or checkpoint file."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
