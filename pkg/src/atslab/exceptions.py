"""Exception hierarchy shared by all atslab modules."""


class ATSError(Exception):
    """Base class for every error raised by atslab."""


class ValidationError(ATSError, ValueError):
    """Bad input: parameters, files or quotes that violate a documented invariant."""


class DomainError(ATSError, ValueError):
    """A complex power or logarithm left the principal-branch domain."""


class NumericalError(ATSError, RuntimeError):
    """Quadrature, root finding or optimisation failed to converge."""
