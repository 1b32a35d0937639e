"""Exception hierarchy shared across the toolkit."""


class OmniObsError(Exception):
    """Base class for every error raised by omniobs."""


class EmptyR(OmniObsError, ValueError):
    """The set of agents with absolute output access is empty."""


class NotConnected(OmniObsError, ValueError):
    """The communication graph is not connected."""


class NotDetectable(OmniObsError, ValueError):
    """A pair (A, C) has an unstable unobservable mode."""


class BadPoleSet(OmniObsError, ValueError):
    """Requested observer poles are not conjugate-closed or not strictly stable."""


class NoConvergence(OmniObsError, ArithmeticError):
    """An iterative numerical routine failed its residual check."""


class NotOrthonormal(OmniObsError, ValueError):
    """A matrix expected to have orthonormal columns does not."""


class DimensionMismatch(OmniObsError, ValueError):
    pass


class NonFinite(OmniObsError, ArithmeticError):
    """A simulated state became NaN or infinite.

    ``time`` holds the last time stamp at which the state was still finite.
    """

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class InconsistentAccess(OmniObsError, ValueError):
    """Access weight and supplied own output disagree."""


class ZeroW(OmniObsError, ValueError):
    """All access weights are zero."""


class SetupMismatch(OmniObsError, ValueError):
    """Observer design does not match the plant it is attached to."""


class Singular(OmniObsError, ArithmeticError):
    pass


class NoLeaders(OmniObsError, ValueError):
    pass


class ConfigInvalid(OmniObsError, ValueError):
    """Experiment configuration failed validation.

    ``errors`` maps a dotted field path to a human readable message.
    """

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = {"config": errors}
        self.errors = dict(errors)
        msg = "; ".join(f"{k}: {v}" for k, v in self.errors.items())
        super().__init__(msg)


class ConstraintViolation(OmniObsError, ValueError):
    """A synthesized observer design failed constraint verification."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
