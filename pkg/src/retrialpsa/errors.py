"""Exception types raised across the package."""


class ModelError(ValueError):
    """Invalid model parameters or model file."""


class UnstableModelError(ModelError):
    """The requested analysis needs a stable model (rho < 1)."""


class Tau0ViolationError(ModelError):
    """Neither tau0 < 1 nor nu0 < 1 holds, so the drift case split fails."""


class NumericalError(ArithmeticError):
    """Base class for numerical failures (exit code 3 in the CLI)."""


class NoConvergenceError(NumericalError):
    pass


class RootOutsideDiskError(NumericalError):
    pass


class DepthExceededError(NumericalError):
    pass


class NanDerivativeError(NumericalError):
    pass


class SingularSystemError(NumericalError):
    pass
