"""Exception hierarchy. Everything raised on purpose derives from CosmaError."""


class CosmaError(Exception):
    """Base class for all domain errors raised by this package."""


# mesh I/O and validity
class ParseError(CosmaError):
    """Malformed input file. Carries the offending line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NonTriangleFace(CosmaError):
    pass


class DanglingIndex(CosmaError):
    pass


class IoError(CosmaError):
    pass


class InvalidMesh(CosmaError):
    pass


# subdivision / decimation / normalization
class NotSemiRegular(CosmaError):
    """Mesh cannot be coarsened by undoing midpoint subdivision.

    ``step`` is the refinement step (1-based, counted from the fine mesh)
    at which coarsening failed.
    """

    def __init__(self, message, step=None):
        if step is not None:
            message = f"coarsening step {step}: {message}"
        super().__init__(message)
        self.step = step


class CannotDecimate(CosmaError):
    pass


class DegenerateExtent(CosmaError):
    pass


# remeshing
class EmptySet(CosmaError):
    pass


class DivergedFit(CosmaError):
    pass


# patches / spectral ops / model
class UnsupportedLevel(CosmaError):
    pass


class ConnectivityMismatch(CosmaError):
    pass


class ShapeMismatch(CosmaError):
    pass


class DisconnectedGraph(CosmaError):
    pass


# training / checkpoints
class EmptyDataset(CosmaError):
    pass


class NonFiniteLoss(CosmaError):
    pass


class VersionMismatch(CosmaError):
    pass


class LevelMismatch(CosmaError):
    pass


# metrics
class EmptyMesh(CosmaError):
    pass


# analysis
class DegenerateData(CosmaError):
    pass


class TooShort(CosmaError):
    pass


class SingleClass(CosmaError):
    pass


# synthetic data / CLI
class InvalidSpec(CosmaError):
    pass
