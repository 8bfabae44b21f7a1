"""User-facing optimal control problem description.

An :class:`OcpSpec` bundles the problem dimensions with pointwise smooth-data
callbacks and their first derivatives. Only first derivatives are required
from the user; anything second-order is obtained by finite differences
inside the collocation solver. Specs are immutable after construction and
callbacks must be reentrant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, GradientCheckError

__all__ = ["OcpDims", "OcpSpec", "validate", "to_fixed_time", "ValidationReport"]

_FD_STEP = 1e-6
_FD_TOL = 1e-4


@dataclass(frozen=True)
class OcpDims:
    """Problem dimensions: state, control, constraint and boundary counts."""

    n: int
    m: int
    n_g: int = 0
    n_c: int = 0
    n_h: int = 1

    def __post_init__(self):
        if self.n < 1 or self.m < 1 or self.n_h < 1:
            raise ValueError(f"need n >= 1, m >= 1, n_h >= 1, got {self}")
        if self.n_g < 0 or self.n_c < 0:
            raise ValueError(f"constraint counts must be >= 0, got {self}")


def _zero_vec(k):
    return lambda *args: np.zeros(k)


def _zero_mat(r, c):
    return lambda *args: np.zeros((r, c))


@dataclass(frozen=True)
class OcpSpec:
    """Constrained optimal control problem on [0, T].

    Minimize phi(x(T)) + int_0^T l(x, u) dt subject to xdot = f(x, u),
    h(x(0), x(T)) = 0, g(x) <= 0 and c(x, u) <= 0. All callbacks are
    pointwise in (x, u) and must be deterministic and side-effect free.
    When ``free_time`` is True the horizon is an unknown and ``T`` is
    ignored; use :func:`to_fixed_time` before transcription.
    """

    dims: OcpDims
    T: Optional[float]
    f: Callable
    f_x: Callable
    f_u: Callable
    l: Callable
    l_x: Callable
    l_u: Callable
    phi: Callable = None
    phi_x: Callable = None
    g: Callable = None
    g_x: Callable = None
    c: Callable = None
    c_x: Callable = None
    c_u: Callable = None
    h: Callable = None
    h_x0: Callable = None
    h_xT: Callable = None
    free_time: bool = False
    name: str = ""

    def __post_init__(self):
        d = self.dims
        if not self.free_time and (self.T is None or self.T <= 0):
            raise ValueError(f"fixed-time spec needs T > 0, got {self.T}")
        defaults = {
            "phi": lambda x: 0.0,
            "phi_x": _zero_vec(d.n),
            "g": _zero_vec(d.n_g),
            "g_x": _zero_mat(d.n_g, d.n),
            "c": _zero_vec(d.n_c),
            "c_x": _zero_mat(d.n_c, d.n),
            "c_u": _zero_mat(d.n_c, d.m),
        }
        for key, fn in defaults.items():
            if getattr(self, key) is None:
                object.__setattr__(self, key, fn)
        for key in ("h", "h_x0", "h_xT"):
            if getattr(self, key) is None:
                raise ValueError("boundary map h and its Jacobians are required")


@dataclass
class ValidationReport:
    """Per-callback outcome of shape and finite-difference checks."""

    checks: list = field(default_factory=list)

    def record(self, callback, max_deviation):
        self.checks.append((callback, max_deviation))

    @property
    def max_deviation(self):
        return max((d for _, d in self.checks), default=0.0)


def _check_shape(name, arr, expected):
    arr = np.asarray(arr, dtype=float)
    if arr.shape != expected:
        raise DimensionError(name, expected, arr.shape)
    return arr


def _fd_columns(fun, point, out_dim):
    """Central finite-difference Jacobian of fun w.r.t. a single array arg."""
    point = np.asarray(point, dtype=float)
    cols = np.empty((out_dim, point.size))
    for j in range(point.size):
        step = _FD_STEP * (1.0 + abs(point[j]))
        hi = point.copy()
        lo = point.copy()
        hi[j] += step
        lo[j] -= step
        cols[:, j] = (np.atleast_1d(fun(hi)) - np.atleast_1d(fun(lo))) / (2 * step)
    return cols


def _compare(name, analytic, fd, report):
    dev = np.max(np.abs(analytic - fd) / (1.0 + np.maximum(np.abs(analytic), np.abs(fd))))
    if dev > _FD_TOL:
        raise GradientCheckError(name, float(dev), _FD_TOL)
    report.record(name, float(dev))


def validate(spec: OcpSpec, probe) -> ValidationReport:
    """Check shapes and first derivatives of all callbacks at a probe point.

    Every analytic Jacobian must match central finite differences at the
    probe to 1e-4 relative; the first failing callback is named in the
    raised error.
    """
    d = spec.dims
    x, u = (np.asarray(probe[0], dtype=float), np.asarray(probe[1], dtype=float))
    if x.shape != (d.n,):
        raise DimensionError("probe state", (d.n,), x.shape)
    if u.shape != (d.m,):
        raise DimensionError("probe control", (d.m,), u.shape)
    report = ValidationReport()

    _check_shape("f", spec.f(x, u), (d.n,))
    _check_shape("l", np.asarray(spec.l(x, u), dtype=float), ())
    jac = _check_shape("f_x", spec.f_x(x, u), (d.n, d.n))
    _compare("f_x", jac, _fd_columns(lambda xx: spec.f(xx, u), x, d.n), report)
    jac = _check_shape("f_u", spec.f_u(x, u), (d.n, d.m))
    _compare("f_u", jac, _fd_columns(lambda uu: spec.f(x, uu), u, d.n), report)
    grad = _check_shape("l_x", spec.l_x(x, u), (d.n,))
    _compare("l_x", grad, _fd_columns(lambda xx: spec.l(xx, u), x, 1)[0], report)
    grad = _check_shape("l_u", spec.l_u(x, u), (d.m,))
    _compare("l_u", grad, _fd_columns(lambda uu: spec.l(x, uu), u, 1)[0], report)
    _check_shape("phi", np.asarray(spec.phi(x), dtype=float), ())
    grad = _check_shape("phi_x", spec.phi_x(x), (d.n,))
    _compare("phi_x", grad, _fd_columns(spec.phi, x, 1)[0], report)
    if d.n_g:
        _check_shape("g", spec.g(x), (d.n_g,))
        jac = _check_shape("g_x", spec.g_x(x), (d.n_g, d.n))
        _compare("g_x", jac, _fd_columns(spec.g, x, d.n_g), report)
    if d.n_c:
        _check_shape("c", spec.c(x, u), (d.n_c,))
        jac = _check_shape("c_x", spec.c_x(x, u), (d.n_c, d.n))
        _compare("c_x", jac, _fd_columns(lambda xx: spec.c(xx, u), x, d.n_c), report)
        jac = _check_shape("c_u", spec.c_u(x, u), (d.n_c, d.m))
        _compare("c_u", jac, _fd_columns(lambda uu: spec.c(x, uu), u, d.n_c), report)
    x0 = x
    xT = x + 0.01 * (1.0 + np.abs(x))  # distinct endpoint so h_x0 != h_xT is exercised
    _check_shape("h", spec.h(x0, xT), (d.n_h,))
    jac = _check_shape("h_x0", spec.h_x0(x0, xT), (d.n_h, d.n))
    _compare("h_x0", jac, _fd_columns(lambda a: spec.h(a, xT), x0, d.n_h), report)
    jac = _check_shape("h_xT", spec.h_xT(x0, xT), (d.n_h, d.n))
    _compare("h_xT", jac, _fd_columns(lambda b: spec.h(x0, b), xT, d.n_h), report)
    return report


def to_fixed_time(spec: OcpSpec) -> OcpSpec:
    """Rewrite a free-horizon problem as a fixed-horizon one on [0, 1].

    The horizon becomes an extra state with zero dynamics; the dynamics are
    scaled by it, the running cost becomes T * l, and all constraints are
    composed with the state projection. Fixed-time specs pass through
    unchanged.
    """
    if not spec.free_time:
        return spec
    d = spec.dims
    n = d.n
    na = n + 1
    dims = OcpDims(n=na, m=d.m, n_g=d.n_g, n_c=d.n_c, n_h=d.n_h)

    def f(xa, u):
        return np.append(xa[n] * spec.f(xa[:n], u), 0.0)

    def f_x(xa, u):
        out = np.zeros((na, na), dtype=np.result_type(xa, u, float))
        out[:n, :n] = xa[n] * spec.f_x(xa[:n], u)
        out[:n, n] = spec.f(xa[:n], u)
        return out

    def f_u(xa, u):
        out = np.zeros((na, d.m), dtype=np.result_type(xa, u, float))
        out[:n, :] = xa[n] * spec.f_u(xa[:n], u)
        return out

    def l(xa, u):
        return xa[n] * spec.l(xa[:n], u)

    def l_x(xa, u):
        return np.append(xa[n] * spec.l_x(xa[:n], u), spec.l(xa[:n], u))

    def l_u(xa, u):
        return xa[n] * spec.l_u(xa[:n], u)

    def phi(xa):
        return spec.phi(xa[:n])

    def phi_x(xa):
        return np.append(spec.phi_x(xa[:n]), 0.0)

    def g(xa):
        return spec.g(xa[:n])

    def g_x(xa):
        out = np.zeros((d.n_g, na), dtype=np.result_type(xa, float))
        out[:, :n] = spec.g_x(xa[:n])
        return out

    def c(xa, u):
        return spec.c(xa[:n], u)

    def c_x(xa, u):
        out = np.zeros((d.n_c, na), dtype=np.result_type(xa, u, float))
        out[:, :n] = spec.c_x(xa[:n], u)
        return out

    def c_u(xa, u):
        return spec.c_u(xa[:n], u)

    def h(xa0, xaT):
        return spec.h(xa0[:n], xaT[:n])

    def h_x0(xa0, xaT):
        out = np.zeros((d.n_h, na), dtype=np.result_type(xa0, xaT, float))
        out[:, :n] = spec.h_x0(xa0[:n], xaT[:n])
        return out

    def h_xT(xa0, xaT):
        out = np.zeros((d.n_h, na), dtype=np.result_type(xa0, xaT, float))
        out[:, :n] = spec.h_xT(xa0[:n], xaT[:n])
        return out

    return OcpSpec(
        dims=dims, T=1.0, f=f, f_x=f_x, f_u=f_u, l=l, l_x=l_x, l_u=l_u,
        phi=phi, phi_x=phi_x, g=g, g_x=g_x, c=c, c_x=c_x, c_u=c_u,
        h=h, h_x0=h_x0, h_xT=h_xT, free_time=False,
        name=spec.name + "_fixed_time" if spec.name else "",
    )
