"""Exception types shared across the workbench."""


class LookbackError(Exception):
    """Base class for all workbench errors."""


class MalformedStory(LookbackError):
    """A story violates a structural invariant (duplicate entities, bad visibility)."""


class AmbiguousBinding(LookbackError, AssertionError):
    """More than one binding address matched the pointer."""


class UnsupportedTemplate(LookbackError):
    pass


class SchemaError(LookbackError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class LayoutOverflow(LookbackError):
    pass


class UnknownToken(LookbackError):
    pass


class HookOutOfRange(LookbackError):
    pass


class AlignmentGap(LookbackError):
    pass


class DegenerateMatrix(LookbackError):
    pass


class NonfiniteLoss(LookbackError):
    pass


class ZeroColumn(LookbackError):
    pass


class MissingDataset(LookbackError):
    pass
