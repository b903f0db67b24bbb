"""Exception hierarchy shared by all koopid modules."""


class KoopidError(Exception):
    """Base class for every error raised by the library."""


class ConfigError(KoopidError, ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


class NumericalError(KoopidError, ArithmeticError):
    """Base class for numerical failures (CLI exit code 3)."""


# observables
class MissingDerivative(KoopidError, ValueError):
    pass


class DuplicateLabel(KoopidError, ValueError):
    pass


class TooShort(KoopidError, ValueError):
    pass


class WindowTooLarge(KoopidError, ValueError):
    pass


class DimensionMismatch(KoopidError, ValueError):
    pass


# koopman core
class NonFiniteLift(NumericalError):
    pass


class EmptySet(KoopidError, ValueError):
    pass


class DtMismatch(KoopidError, ValueError):
    pass


class BasisMismatch(KoopidError, ValueError):
    pass


class NoPrincipalLog(NumericalError):
    def __init__(self, eigenvalues):
        self.eigenvalues = list(eigenvalues)
        super().__init__(
            "matrix has eigenvalues on the closed negative real axis: "
            + ", ".join(f"{complex(v):.6g}" for v in self.eigenvalues)
        )


class NonFinite(NumericalError):
    def __init__(self, message, step=None, time=None):
        self.step = step
        self.time = time
        super().__init__(message)


# error bounds
class SeriesTooShort(KoopidError, ValueError):
    pass


# control
class NotPSD(KoopidError, ValueError):
    pass


class RiccatiDiverged(NumericalError):
    pass


class Unstabilizable(NumericalError):
    def __init__(self, message, radius=None):
        self.radius = radius
        super().__init__(message)


# systems
class LengthMismatch(KoopidError, ValueError):
    pass
