"""Exception hierarchy shared by every module."""


class ScoutError(Exception):
    """Base class for all errors raised by subspace_scout."""


class NotPSD(ScoutError, ValueError):
    pass


class ZeroMatrix(ScoutError, ValueError):
    pass


class NotOrthonormal(ScoutError, ValueError):
    pass


class DimensionMismatch(ScoutError, ValueError):
    pass


class BadMode(ScoutError, IndexError):
    pass


class SignedEdgesRejected(ScoutError, ValueError):
    pass


class PlainEdgesRejected(ScoutError, ValueError):
    pass


class SingularMatrix(ScoutError, ValueError):
    pass


class IoFailure(ScoutError, OSError):
    pass


class NoRoot(ScoutError, RuntimeError):
    pass


class MaxIterations(ScoutError, RuntimeError):
    pass


class Unbounded(ScoutError, ValueError):
    """Some sample starts in the kernel of P but its image does not."""


class TooManyGroups(ScoutError, ValueError):
    pass


class BasisMismatch(ScoutError, ValueError):
    pass


class KernelNotOneDimensional(ScoutError, ValueError):
    pass


class CertificateRefused(ScoutError):
    """A certificate cannot be issued from the available data.

    The CLI maps every subclass to exit code 3.
    """


class EtaTooLarge(CertificateRefused, ValueError):
    def __init__(self, message, eta=None, suggested_n=None):
        super().__init__(message)
        self.eta = eta
        self.suggested_n = suggested_n


class NoPower(CertificateRefused, ValueError):
    pass


class Infeasible(CertificateRefused, RuntimeError):
    pass


class InfeasibleAtUpperBound(Infeasible):
    pass
