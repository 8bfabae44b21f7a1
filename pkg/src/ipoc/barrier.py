"""Scalar barrier and complementarity primitives.

The log barrier keeps primal iterates strictly inside the constraint set;
its +infinity branch is a typed sentinel so that line searches can compare
merit values at infeasible trial points without branching on exceptions.
The smoothed complementarity function encodes the perturbed conditions
(lam >= 0, y <= 0, lam * y = -eps) as the root of a globally smooth map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FBOriginError

__all__ = ["BarrierEval", "psi_eval", "fb_value", "fb_eval"]


@dataclass(frozen=True)
class BarrierEval:
    """Value and first two derivatives of the log barrier at a point.

    For arguments >= 0 ``value`` is ``math.inf`` and the derivatives are
    None (unset); for arguments < 0 all three fields are finite.
    """

    value: float
    first: float | None = None
    second: float | None = None

    @property
    def finite(self) -> bool:
        return math.isfinite(self.value)


def psi_eval(x: float) -> BarrierEval:
    """Evaluate the log barrier -log(-x) with derivatives.

    Returns the +infinity sentinel for x >= 0. Raises ValueError on
    non-finite input.
    """
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"barrier argument must be finite, got {x}")
    if x >= 0.0:
        return BarrierEval(math.inf)
    return BarrierEval(-math.log(-x), -1.0 / x, 1.0 / (x * x))


def fb_value(x: float, y: float, eps: float) -> float:
    """Smoothed Fischer-Burmeister function x - y - sqrt(x^2 + y^2 + 2 eps).

    Its root set is exactly {x >= 0, y <= 0, x*y = -eps}.
    """
    if eps < 0.0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    # np.sqrt (not math.sqrt) keeps this usable with complex-step arguments
    return x - y - np.sqrt(x * x + y * y + 2.0 * eps)


def fb_eval(x: float, y: float, eps: float) -> tuple[float, float, float]:
    """Value and partial derivatives (d/dx, d/dy) of ``fb_value``.

    The partials have a root singularity at (0, 0, 0); that point raises
    FBOriginError (the continuation keeps eps > 0, so it is unreachable
    in normal operation).
    """
    if eps < 0.0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    root = math.sqrt(x * x + y * y + 2.0 * eps)
    if root == 0.0:
        raise FBOriginError(
            "Fischer-Burmeister partials are undefined at (0, 0, 0)"
        )
    return x - y - root, 1.0 - x / root, -1.0 - y / root
