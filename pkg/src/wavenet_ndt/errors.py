"""Exception hierarchy shared by all subpackages."""


class WavenetError(Exception):
    """Base class for every error raised by wavenet_ndt."""


class InvalidParameter(WavenetError, ValueError):
    """A physical or configuration parameter violates its invariants."""


class EvanescentMode(WavenetError, ValueError):
    """The requested guided mode does not propagate at this frequency."""


class GridMismatch(WavenetError, ValueError):
    pass


class SingularWavenumber(WavenetError, ValueError):
    pass


class CoverageError(WavenetError, ValueError):
    """Spectrum wavenumbers cannot be aligned to the target Fourier bins."""


class OutOfRange(WavenetError, ValueError):
    """Defect support extends beyond the spatial grid."""


class EmptyInput(WavenetError, ValueError):
    pass


class ZeroSignal(WavenetError, ValueError):
    pass


class ZeroReference(WavenetError, ValueError):
    pass


class ShapeMismatch(WavenetError, ValueError):
    pass


class DegenerateBatch(WavenetError, ValueError):
    pass


class Divergence(WavenetError, FloatingPointError):
    """Training loss became non-finite."""


class FormatVersionMismatch(WavenetError, ValueError):
    """A dataset or checkpoint file has an unexpected header."""
