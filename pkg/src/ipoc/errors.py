"""Exception hierarchy shared across the solver stack."""


class IpocError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(IpocError):
    """A user callback returned an array of the wrong shape."""

    def __init__(self, callback, expected, got):
        self.callback = callback
        self.expected = expected
        self.got = got
        super().__init__(
            f"callback {callback!r}: expected shape {expected}, got {got}"
        )


class GradientCheckError(IpocError):
    """An analytic Jacobian disagrees with finite differences."""

    def __init__(self, callback, max_deviation, tol):
        self.callback = callback
        self.max_deviation = max_deviation
        self.tol = tol
        super().__init__(
            f"callback {callback!r}: max finite-difference deviation "
            f"{max_deviation:.3e} exceeds tolerance {tol:.1e}"
        )


class FBOriginError(IpocError):
    """Partials of the complementarity function requested at the singular origin."""


class InteriorViolationError(IpocError):
    """A strictly interior point was required but a constraint is non-negative."""

    def __init__(self, message, node=None, constraint=None):
        self.node = node
        self.constraint = constraint
        super().__init__(message)


class InfeasibleStartError(IpocError):
    """Primal solve started (or line-searched) outside the barrier domain."""


class SingularMatrixError(IpocError):
    """Structured LU hit a numerically singular pivot."""

    def __init__(self, block, detail=""):
        self.block = block
        msg = f"singular pivot in block {block}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NoConvergenceError(IpocError):
    """Newton iteration stagnated; carries the best iterate seen."""

    def __init__(self, message, best=None, best_residual=None):
        self.best = best
        self.best_residual = best_residual
        super().__init__(message)


class MeshLimitError(IpocError):
    """Adaptive refinement exceeded the mesh point budget."""


class ContinuationError(IpocError):
    """An inner solve failed; carries the last good (eps, solution) pair."""

    def __init__(self, message, eps=None, last_good=None, cause=None):
        self.eps = eps
        self.last_good = last_good
        self.cause = cause
        super().__init__(message)
