"""Transcription of an OCP into a solvable boundary value DAE.

Two variants are produced. The primal system eliminates the inequality
multipliers through the log barrier and is only defined on the interior
region; evaluation outside it yields a +infinity residual that the Newton
line search treats as an infinitely bad merit. The primal-dual system keeps
the multipliers as algebraic unknowns tied to the constraints by smoothed
Fischer-Burmeister equations and is globally defined.

In both variants the boundary multiplier enters as a vector of unknown
global parameters of the BVP, so the generic boundary block covers any
boundary map without per-problem elimination.
"""

from __future__ import annotations

import numpy as np

from .barrier import fb_value
from .errors import InteriorViolationError
from .ocp import OcpSpec

__all__ = ["DaeSystem", "primal_system", "primal_dual_system", "recover_multipliers"]


class DaeSystem:
    """Semi-explicit index-1 BVP-DAE with unknown global parameters.

    ``f(t, y, z, params)`` is the differential right-hand side (dim n_y),
    ``g(t, y, z, params)`` the algebraic residual (dim n_z) and
    ``bc(y0, yT, params)`` the boundary residual (dim n_y + n_p).
    ``eps`` is the barrier parameter; it is the only mutable attribute and
    is owned single-threaded by the continuation driver.
    """

    def __init__(self, n_y, n_z, n_p, horizon, f, g, bc, eps=1.0,
                 rhs_uses_params=False, kind="generic"):
        self.n_y = n_y
        self.n_z = n_z
        self.n_p = n_p
        self.horizon = float(horizon)
        self.f = f
        self.g = g
        self.bc = bc
        self.eps = float(eps)
        # optional pointwise distance-to-boundary probe (positive inside);
        # set by transcriptions whose residual is singular on the boundary
        self.margin = None
        # set when f/g/bc accept complex arguments, enabling exact
        # complex-step Jacobians in the solver
        self.complex_step = False
        # skipping the parameter columns in rhs finite differences is a
        # large saving when, as in both transcriptions, only bc sees params
        self.rhs_uses_params = rhs_uses_params
        self.kind = kind
        if horizon <= 0:
            raise ValueError(f"horizon must be positive, got {horizon}")

    @property
    def n_bc(self):
        return self.n_y + self.n_p


def _boundary_block(spec):
    """Generic boundary residual: h rows plus both transversality rows."""
    n = spec.dims.n

    def bc(y0, yT, lam):
        x0, p0 = y0[:n], y0[n:]
        xT, pT = yT[:n], yT[n:]
        rows_h = spec.h(x0, xT)
        rows_0 = p0 + spec.h_x0(x0, xT).T @ lam
        rows_T = pT - spec.phi_x(xT) - spec.h_xT(x0, xT).T @ lam
        return np.concatenate([rows_h, rows_0, rows_T])

    return bc


def primal_system(spec: OcpSpec) -> DaeSystem:
    """Barrier-penalized stationarity system of the OCP.

    Differential part: state dynamics and the adjoint equation with barrier
    gradients of both constraint families; algebraic part: stationarity of
    the penalized pre-Hamiltonian in the control. Evaluation at a point
    with any g_i >= 0 or c_i >= 0 returns +infinity in every component.
    """
    if spec.free_time:
        raise ValueError("transcribe fixed-time specs; apply to_fixed_time first")
    d = spec.dims
    n, m = d.n, d.m
    system = DaeSystem(
        n_y=2 * n, n_z=m, n_p=d.n_h, horizon=spec.T,
        f=None, g=None, bc=_boundary_block(spec), kind="primal",
    )

    def rhs(t, y, z, params):
        x, p, u = y[:n], y[n:], z
        gx = np.asarray(spec.g(x))
        cx = np.asarray(spec.c(x, u))
        if np.any(gx.real >= 0.0) or np.any(cx.real >= 0.0):
            return np.full(2 * n, np.inf)
        eps = system.eps
        hx = spec.l_x(x, u) + spec.f_x(x, u).T @ p
        if d.n_g:
            hx = hx + eps * spec.g_x(x).T @ (-1.0 / gx)
        if d.n_c:
            hx = hx + eps * spec.c_x(x, u).T @ (-1.0 / cx)
        return np.concatenate([spec.f(x, u), -hx])

    def alg(t, y, z, params):
        x, p, u = y[:n], y[n:], z
        gx = np.asarray(spec.g(x))
        cx = np.asarray(spec.c(x, u))
        if np.any(gx.real >= 0.0) or np.any(cx.real >= 0.0):
            return np.full(m, np.inf)
        hu = spec.l_u(x, u) + spec.f_u(x, u).T @ p
        if d.n_c:
            hu = hu + system.eps * spec.c_u(x, u).T @ (-1.0 / cx)
        return hu

    def margin(t, y, z):
        x, u = y[:n], z
        parts = []
        if d.n_g:
            parts.append(-np.asarray(spec.g(x)))
        if d.n_c:
            parts.append(-np.asarray(spec.c(x, u)))
        return np.concatenate(parts) if parts else np.zeros(0)

    system.f = rhs
    system.g = alg
    system.margin = margin
    system.complex_step = True
    return system


def primal_dual_system(spec: OcpSpec) -> DaeSystem:
    """Primal-dual system with Fischer-Burmeister complementarity rows.

    Algebraic unknowns are (u, lam_g, lam_c); no interiority is required at
    any iterate, which is the practical advantage over the primal variant.
    """
    if spec.free_time:
        raise ValueError("transcribe fixed-time specs; apply to_fixed_time first")
    d = spec.dims
    n, m = d.n, d.m
    n_z = m + d.n_g + d.n_c
    system = DaeSystem(
        n_y=2 * n, n_z=n_z, n_p=d.n_h, horizon=spec.T,
        f=None, g=None, bc=_boundary_block(spec), kind="primal-dual",
    )

    def split(z):
        return z[:m], z[m:m + d.n_g], z[m + d.n_g:]

    def rhs(t, y, z, params):
        x, p = y[:n], y[n:]
        u, lam_g, lam_c = split(z)
        hx = spec.l_x(x, u) + spec.f_x(x, u).T @ p
        if d.n_g:
            hx = hx + spec.g_x(x).T @ lam_g
        if d.n_c:
            hx = hx + spec.c_x(x, u).T @ lam_c
        return np.concatenate([spec.f(x, u), -hx])

    def alg(t, y, z, params):
        x, p = y[:n], y[n:]
        u, lam_g, lam_c = split(z)
        hu = spec.l_u(x, u) + spec.f_u(x, u).T @ p
        if d.n_c:
            hu = hu + spec.c_u(x, u).T @ lam_c
        eps = system.eps
        rows = [hu]
        if d.n_g:
            gx = spec.g(x)
            rows.append(np.array([
                fb_value(lam_g[i], gx[i], eps) for i in range(d.n_g)
            ]))
        if d.n_c:
            cx = spec.c(x, u)
            rows.append(np.array([
                fb_value(lam_c[i], cx[i], eps) for i in range(d.n_c)
            ]))
        return np.concatenate(rows)

    system.f = rhs
    system.g = alg
    system.complex_step = True
    return system


def recover_multipliers(spec: OcpSpec, solution, eps):
    """Barrier multiplier trajectories -eps/g and -eps/c on the solution mesh.

    ``solution`` is a converged primal DaeSolution; the control is the first
    m algebraic components. Raises InteriorViolationError naming the node
    and constraint if the solution touches the boundary.
    """
    d = spec.dims
    n, m = d.n, d.m
    nodes = solution.mesh.nodes
    lam_g = np.zeros((nodes.size, d.n_g))
    lam_c = np.zeros((nodes.size, d.n_c))
    for k in range(nodes.size):
        x = solution.Y[k, :n]
        u = solution.Z_nodes[k, :m]
        if d.n_g:
            gx = spec.g(x)
            bad = np.flatnonzero(gx >= 0.0)
            if bad.size:
                raise InteriorViolationError(
                    f"state constraint {bad[0]} non-interior at node {k} "
                    f"(g = {gx[bad[0]]:.3e})", node=k, constraint=int(bad[0]))
            lam_g[k] = -eps / gx
        if d.n_c:
            cx = spec.c(x, u)
            bad = np.flatnonzero(cx >= 0.0)
            if bad.size:
                raise InteriorViolationError(
                    f"mixed constraint {bad[0]} non-interior at node {k} "
                    f"(c = {cx[bad[0]]:.3e})", node=k, constraint=int(bad[0]))
            lam_c[k] = -eps / cx
    return lam_g, lam_c
