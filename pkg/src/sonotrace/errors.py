"""Exception types shared across the package."""


class SonotraceError(Exception):
    """Base class for all package-specific errors."""


class ArgumentError(SonotraceError, ValueError):
    """A caller-supplied argument violates an operation's preconditions."""


class NumericDomainError(SonotraceError, ValueError):
    """An input is outside the numeric domain of an operation (e.g. a matrix
    that is not symmetric PSD within tolerance)."""


class ConditionError(SonotraceError, ValueError):
    """A condition bundle does not match what the model requires."""


class FormatError(SonotraceError, ValueError):
    """A binary file does not conform to its on-disk format.

    ``offset`` is the byte offset at which decoding failed, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


class DivergenceError(SonotraceError, RuntimeError):
    """A numeric process produced non-finite values.

    ``step`` identifies the sampler step or training iteration, when known.
    """

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class ProtocolError(SonotraceError, ValueError):
    """An evaluation protocol violation, e.g. unpaired clips.

    ``unmatched`` lists the ids that could not be paired.
    """

    def __init__(self, message: str, unmatched: list[str] | None = None):
        super().__init__(message)
        self.unmatched = unmatched or []
