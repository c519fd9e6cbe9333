"""Exception types raised across the package."""


class RegimeError(ValueError):
    """Parameters fall outside the regime where a formula is defined."""


class ProfileError(ValueError):
    """A field profile violates the shape hypotheses (range, extrema, curvature)."""


class ThinningGuardError(ValueError):
    """The thinning engine was asked to run where its dominating rate is invalid."""


class ConvergenceError(RuntimeError):
    """A root finder failed to converge; indicates a numerics bug."""


class TruncationError(RuntimeError):
    """A run hit its event budget before reaching the stopping condition.

    The partial event log is kept on ``self.log`` so callers can still inspect it.
    """

    def __init__(self, message, log=None):
        super().__init__(message)
        self.log = log
