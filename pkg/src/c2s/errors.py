"""Exception hierarchy shared across the package."""


class C2SError(Exception):
    """Base class for all errors raised by c2s."""


# audio
class DecodeError(C2SError):
    pass


class UnsupportedFormat(C2SError):
    pass


class ClipTooShort(C2SError):
    pass


class SilentClip(C2SError):
    pass


# cochlea / special functions
class SingularFrequency(C2SError):
    pass


class SingularArgument(C2SError):
    pass


class BranchError(C2SError):
    pass


class QuadratureError(C2SError):
    pass


class RateMismatch(C2SError):
    pass


# hair cells / pipeline
class ProbabilityOverflow(C2SError):
    pass


class CalibrationError(C2SError):
    pass


# lif / training
class ShapeError(C2SError, ValueError):
    pass


class GradError(C2SError):
    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


class DivergenceError(C2SError):
    pass


# event store
class SchemaError(C2SError):
    pass


class VersionMismatch(C2SError):
    pass


class CorruptFile(C2SError):
    pass


class SplitError(C2SError):
    pass


# evaluation
class KeyMapError(C2SError):
    pass
