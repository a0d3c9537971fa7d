"""Exception hierarchy shared by every module."""


class JLMError(Exception):
    pass


class DegenerateInput(JLMError, ValueError):
    pass


class InvalidRotation(JLMError, ValueError):
    pass


class TopologyError(JLMError, ValueError):
    pass


class ShapeMismatch(JLMError, ValueError):
    pass


class GraphError(JLMError, RuntimeError):
    pass


class MissingGrad(JLMError, RuntimeError):
    pass


class FormatError(JLMError, ValueError):
    pass


class VersionError(FormatError):
    pass


class UnknownKind(JLMError, ValueError):
    pass


class SequenceTooShort(JLMError, ValueError):
    pass


class WindowTooShort(JLMError, ValueError):
    pass


class LengthMismatch(JLMError, ValueError):
    pass


class SchemaError(JLMError, ValueError):
    pass


class DataError(JLMError, ValueError):
    pass


class NonFiniteLoss(JLMError, FloatingPointError):
    pass


class SourceEnded(JLMError):
    """Raised by a signal source to end a stream cleanly."""
