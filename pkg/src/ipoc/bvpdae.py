"""Collocation solver for two-point BVPs on semi-explicit index-1 DAEs.

Discretization is 3-stage Lobatto IIIA collocation: on each interval the
differential components satisfy the Simpson relation with the midpoint
state given by the Hermite evaluation, which makes the collocation
polynomial the C1 piecewise cubic through node values and derivatives.
Algebraic variables are unknowns at nodes and midpoints, with the
algebraic equations enforced at every collocation point. Unknown global
parameters enter as a dense border.

Nonlinear equations are solved by damped Newton with a residual-norm
merit; an infinite merit (barrier domain violation) simply shrinks the
line search step. Mesh adaptation is driven by the scaled defect of the
continuous interpolant sampled at two Gauss points per interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import abd
from .errors import (
    InfeasibleStartError,
    MeshLimitError,
    NoConvergenceError,
    SingularMatrixError,
)
from .transcription import DaeSystem

__all__ = [
    "Mesh",
    "DaeSolution",
    "SolverOptions",
    "CollocationProblem",
    "solve",
    "estimate_residual",
    "refine_mesh",
    "interpolate",
]

_SQRT_EPS = math.sqrt(np.finfo(float).eps)
_GAUSS_OFFSETS = (0.5 - math.sqrt(3.0) / 6.0, 0.5 + math.sqrt(3.0) / 6.0)
_MIN_INTERVAL_FACTOR = 1e-12


@dataclass(frozen=True)
class Mesh:
    """Strictly increasing time nodes from 0 to the horizon."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 3:
            raise ValueError("mesh needs at least 3 nodes (2 intervals)")
        widths = np.diff(nodes)
        horizon = nodes[-1] - nodes[0]
        if np.any(widths <= 0):
            raise ValueError("mesh nodes must be strictly increasing")
        if nodes[0] != 0.0:
            raise ValueError(f"mesh must start at 0, got {nodes[0]}")
        if np.min(widths) <= _MIN_INTERVAL_FACTOR * horizon:
            raise ValueError("mesh interval below 1e-12 * horizon")

    @property
    def n_intervals(self):
        return self.nodes.size - 1

    @property
    def horizon(self):
        return float(self.nodes[-1])

    @property
    def midpoints(self):
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    @property
    def widths(self):
        return np.diff(self.nodes)


@dataclass
class SolverOptions:
    newton_tol: float = 1e-8
    mesh_tol: float = 1e-6
    max_newton: int = 200
    max_mesh_points: int = 10000
    min_damping: float = 1e-4
    max_sweeps: int = 60
    # iterations without 5% compound residual progress before Newton is
    # declared stalled and the mesh-refinement loop takes over
    stall_window: int = 30

    def __post_init__(self):
        if not (0 < self.newton_tol < 1):
            raise ValueError("newton_tol must lie in (0, 1)")
        for name in ("mesh_tol", "min_damping"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("max_newton", "max_mesh_points", "max_sweeps",
                     "stall_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class DaeSolution:
    """Discrete trajectories on a mesh, plus solve metadata.

    ``Y`` holds differential values at nodes, ``Yp`` their right-hand-side
    values (the C1 interpolant slopes); ``Z_nodes``/``Z_mid`` the algebraic
    values. ``params`` are the unknown global parameters.
    """

    mesh: Mesh
    Y: np.ndarray
    Z_nodes: np.ndarray
    Z_mid: np.ndarray
    params: np.ndarray
    Yp: Optional[np.ndarray] = None
    interval_residuals: Optional[np.ndarray] = None
    newton_iters: int = 0
    converged: bool = False
    residual_history: list = field(default_factory=list)

    def copy_shell(self, mesh, Y, Z_nodes, Z_mid):
        return DaeSolution(
            mesh=mesh, Y=Y, Z_nodes=Z_nodes, Z_mid=Z_mid,
            params=self.params.copy(),
        )


def _cs_jac(fun, x, width, out_size):
    """Complex-step Jacobian columns: exact derivatives of an analytic rhs.

    A purely imaginary perturbation leaves the real part of every
    intermediate untouched, so there is no subtractive cancellation and no
    risk of stepping across a barrier singularity — which defeats real
    differencing once an iterate sits within an FD step of the boundary.
    """
    out = np.empty((out_size, width))
    h = 1e-200
    for j in range(width):
        xc = np.asarray(x, dtype=complex).copy()
        xc[j] += 1j * h
        out[:, j] = np.imag(np.asarray(fun(xc))) / h
    return out


def _fd_jac(fun, base, x, width):
    """Central finite-difference Jacobian columns of fun w.r.t. vector x.

    Falls back to a one-sided difference when a perturbed evaluation leaves
    the rhs domain (barrier boundary under tiny steps).
    """
    out = np.empty((base.size, width))
    for j in range(width):
        step = _SQRT_EPS * (1.0 + abs(x[j]))
        xj = x[j]
        x[j] = xj + step
        hi = fun()
        x[j] = xj - step
        lo = fun()
        x[j] = xj
        col = (hi - lo) / (2.0 * step)
        if not np.all(np.isfinite(col)):
            if np.all(np.isfinite(hi)):
                col = (hi - base) / step
            elif np.all(np.isfinite(lo)):
                col = (base - lo) / step
        out[:, j] = col
    return out


class _PointData:
    __slots__ = ("val_f", "val_g", "fy", "fz", "gy", "gz", "fp", "gp")


class CollocationProblem:
    """Flattened residual and ABD Jacobian of the collocation equations.

    Unknown ordering matches the ABD column layout: node chunks (Y_i, Z_i)
    interleaved with midpoint chunks Zm_i, then the parameters.
    """

    def __init__(self, system: DaeSystem, mesh: Mesh):
        self.system = system
        self.mesh = mesh
        self.n_y = system.n_y
        self.n_z = system.n_z
        self.n_p = system.n_p
        self.k = self.n_y + self.n_z
        self.N = mesh.n_intervals
        self.dim = (self.N + 1) * self.k + self.N * self.n_z + self.n_p
        self.diff_scale = np.ones(self.n_y)
        self.alg_scale = np.ones(self.n_z)
        self.bc_scale = np.ones(self.n_y + self.n_p)

    # -- packing ----------------------------------------------------------
    def pack(self, Y, Z, Zm, params):
        vec = np.empty(self.dim)
        k, nz, N = self.k, self.n_z, self.N
        w = k + nz
        for i in range(N + 1):
            pos = i * w
            vec[pos:pos + self.n_y] = Y[i]
            if nz:
                vec[pos + self.n_y:pos + k] = Z[i]
            if i < N and nz:
                vec[pos + k:pos + w] = Zm[i]
        if self.n_p:
            vec[-self.n_p:] = params
        return vec

    def unpack(self, vec):
        k, nz, N = self.k, self.n_z, self.N
        w = k + nz
        Y = np.empty((N + 1, self.n_y))
        Z = np.empty((N + 1, nz))
        Zm = np.empty((N, nz))
        for i in range(N + 1):
            pos = i * w
            Y[i] = vec[pos:pos + self.n_y]
            if nz:
                Z[i] = vec[pos + self.n_y:pos + k]
                if i < N:
                    Zm[i] = vec[pos + k:pos + w]
        params = vec[-self.n_p:].copy() if self.n_p else np.zeros(0)
        return Y, Z, Zm, params

    # -- evaluation -------------------------------------------------------
    def _safe_midstate(self, y_i, y_n, f_i, f_n, h, tm, z, params):
        """Hermite midpoint state, or the node average when the former
        leaves the rhs domain.

        Near an active constraint the interior margin eventually drops
        below the h^2 midpoint correction, so the constructed state can
        cross the boundary even though both nodes are interior; the plain
        average is the best interior surrogate and only differs where the
        infinite-residual sentinel would otherwise poison the whole sweep.
        Returns (ym, fm, fallback_used) with fm the rhs at the chosen state.
        """
        with np.errstate(invalid="ignore"):
            ym = 0.5 * (y_i + y_n) + (h / 8.0) * (f_i - f_n)
        if np.all(np.isfinite(ym)):
            fm = np.asarray(self.system.f(tm, ym, z, params))
            if np.all(np.isfinite(fm)):
                return ym, fm, False
        avg = 0.5 * (y_i + y_n)
        fa = np.asarray(self.system.f(tm, avg, z, params))
        if np.all(np.isfinite(fa)):
            return avg, fa, True
        return ym, np.full(self.n_y, np.inf), False

    def compute_scales(self, vec):
        """Row scaling 1/(1 + |rhs|) frozen at the current point."""
        sys_, mesh = self.system, self.mesh
        Y, Z, Zm, params = self.unpack(vec)
        t = mesh.nodes
        fmax = np.zeros(self.n_y)
        gmax = np.zeros(self.n_z)
        for i in range(self.N + 1):
            fv = np.asarray(sys_.f(t[i], Y[i], Z[i], params))
            gv = np.asarray(sys_.g(t[i], Y[i], Z[i], params))
            if np.all(np.isfinite(fv)):
                fmax = np.maximum(fmax, np.abs(fv))
            if self.n_z and np.all(np.isfinite(gv)):
                gmax = np.maximum(gmax, np.abs(gv))
        self.diff_scale = 1.0 / (1.0 + fmax)
        if self.n_z:
            self.alg_scale = 1.0 / (1.0 + gmax)
        rbc = np.asarray(sys_.bc(Y[0], Y[-1], params))
        if rbc.shape != (self.n_y + self.n_p,):
            raise ValueError(
                f"boundary residual has shape {rbc.shape}, expected "
                f"({self.n_y + self.n_p},): bc dimension must equal n_y + n_p")
        if np.all(np.isfinite(rbc)):
            self.bc_scale = 1.0 / (1.0 + np.abs(rbc))

    def residual(self, vec):
        sys_, mesh = self.system, self.mesh
        Y, Z, Zm, params = self.unpack(vec)
        t = mesh.nodes
        N, n_y, n_z = self.N, self.n_y, self.n_z
        F = np.empty((N + 1, n_y))
        G = np.empty((N + 1, n_z))
        for i in range(N + 1):
            F[i] = sys_.f(t[i], Y[i], Z[i], params)
            if n_z:
                G[i] = sys_.g(t[i], Y[i], Z[i], params)
        r = np.empty(self.dim)
        w = n_y + 2 * n_z
        for i in range(N):
            h = t[i + 1] - t[i]
            tm = t[i] + 0.5 * h
            ym, fm, _ = self._safe_midstate(
                Y[i], Y[i + 1], F[i], F[i + 1], h, tm,
                Zm[i] if n_z else np.zeros(0), params)
            if np.all(np.isfinite(fm)):
                gm = np.asarray(sys_.g(tm, ym, Zm[i], params)) if n_z else np.zeros(0)
            else:
                gm = np.full(n_z, np.inf)
            pos = i * w
            r[pos:pos + n_z] = G[i] * self.alg_scale
            simpson = (Y[i + 1] - Y[i]) / h - (F[i] + 4.0 * fm + F[i + 1]) / 6.0
            r[pos + n_z:pos + n_z + n_y] = simpson * self.diff_scale
            r[pos + n_z + n_y:pos + w] = gm * self.alg_scale
        pos = N * w
        if n_z:
            r[pos:pos + n_z] = G[N] * self.alg_scale
        rbc = np.asarray(sys_.bc(Y[0], Y[-1], params))
        r[pos + n_z:] = rbc * self.bc_scale
        return r

    def _point(self, t, y, z, params):
        sys_ = self.system
        d = _PointData()
        d.val_f = np.asarray(sys_.f(t, y, z, params))
        d.val_g = np.asarray(sys_.g(t, y, z, params)) if self.n_z else np.zeros(0)
        if getattr(sys_, "complex_step", False):
            d.fy = _cs_jac(lambda yc: sys_.f(t, yc, z, params), y, self.n_y, self.n_y)
            d.gy = _cs_jac(lambda yc: sys_.g(t, yc, z, params), y, self.n_y, self.n_z) if self.n_z else np.zeros((0, self.n_y))
            if self.n_z:
                d.fz = _cs_jac(lambda zc: sys_.f(t, y, zc, params), z, self.n_z, self.n_y)
                d.gz = _cs_jac(lambda zc: sys_.g(t, y, zc, params), z, self.n_z, self.n_z)
            else:
                d.fz = np.zeros((self.n_y, 0))
                d.gz = np.zeros((0, 0))
            if self.n_p and self.system.rhs_uses_params:
                d.fp = _cs_jac(lambda pc: sys_.f(t, y, z, pc), params, self.n_p, self.n_y)
                d.gp = _cs_jac(lambda pc: sys_.g(t, y, z, pc), params, self.n_p, self.n_z) if self.n_z else np.zeros((0, self.n_p))
            else:
                d.fp = np.zeros((self.n_y, self.n_p))
                d.gp = np.zeros((self.n_z, self.n_p))
            return d
        d.fy = _fd_jac(lambda: np.asarray(sys_.f(t, y, z, params)), d.val_f, y, self.n_y)
        d.gy = _fd_jac(lambda: np.asarray(sys_.g(t, y, z, params)), d.val_g, y, self.n_y) if self.n_z else np.zeros((0, self.n_y))
        if self.n_z:
            d.fz = _fd_jac(lambda: np.asarray(sys_.f(t, y, z, params)), d.val_f, z, self.n_z)
            d.gz = _fd_jac(lambda: np.asarray(sys_.g(t, y, z, params)), d.val_g, z, self.n_z)
        else:
            d.fz = np.zeros((self.n_y, 0))
            d.gz = np.zeros((0, 0))
        if self.n_p and self.system.rhs_uses_params:
            d.fp = _fd_jac(lambda: np.asarray(sys_.f(t, y, z, params)), d.val_f, params, self.n_p)
            d.gp = _fd_jac(lambda: np.asarray(sys_.g(t, y, z, params)), d.val_g, params, self.n_p) if self.n_z else np.zeros((0, self.n_p))
        else:
            d.fp = np.zeros((self.n_y, self.n_p))
            d.gp = np.zeros((self.n_z, self.n_p))
        return d

    def jacobian(self, vec):
        sys_, mesh = self.system, self.mesh
        Y, Z, Zm, params = self.unpack(vec)
        t = mesh.nodes
        N, n_y, n_z, n_p = self.N, self.n_y, self.n_z, self.n_p
        k = self.k
        nodes = [self._point(t[i], Y[i], Z[i], params) for i in range(N + 1)]
        A = abd.AbdMatrix(N, k, n_z, n_p)
        ds, as_, bs = self.diff_scale, self.alg_scale, self.bc_scale
        eye = np.eye(n_y)
        for i in range(N):
            h = t[i + 1] - t[i]
            tm = t[i] + 0.5 * h
            a, b = nodes[i], nodes[i + 1]
            ym, _, fallback = self._safe_midstate(
                Y[i], Y[i + 1], a.val_f, b.val_f, h, tm,
                Zm[i] if n_z else np.zeros(0), params)
            m = self._point(tm, ym, Zm[i], params)
            if fallback:
                # the node-average surrogate depends on the nodes only
                dym_dyi = 0.5 * eye
                dym_dyn = 0.5 * eye
                dym_dzi = np.zeros((n_y, n_z))
                dym_dzn = np.zeros((n_y, n_z))
                dym_dp = np.zeros((n_y, n_p))
            else:
                dym_dyi = 0.5 * eye + (h / 8.0) * a.fy
                dym_dyn = 0.5 * eye - (h / 8.0) * b.fy
                dym_dzi = (h / 8.0) * a.fz
                dym_dzn = -(h / 8.0) * b.fz
                dym_dp = (h / 8.0) * (a.fp - b.fp)

            blk = A.blocks[i]
            bp = A.block_params[i]
            # node-i algebraic rows
            if n_z:
                blk[:n_z, :n_y] = a.gy * as_[:, None]
                blk[:n_z, n_y:k] = a.gz * as_[:, None]
                bp[:n_z] = a.gp * as_[:, None]
            # Simpson rows
            r0 = n_z
            fym = m.fy
            blk[r0:r0 + n_y, :n_y] = (-eye / h - (a.fy + 4.0 * fym @ dym_dyi) / 6.0) * ds[:, None]
            if n_z:
                blk[r0:r0 + n_y, n_y:k] = (-(a.fz + 4.0 * fym @ dym_dzi) / 6.0) * ds[:, None]
                blk[r0:r0 + n_y, k:k + n_z] = (-(4.0 / 6.0) * m.fz) * ds[:, None]
            blk[r0:r0 + n_y, k + n_z:k + n_z + n_y] = (eye / h - (b.fy + 4.0 * fym @ dym_dyn) / 6.0) * ds[:, None]
            if n_z:
                blk[r0:r0 + n_y, k + n_z + n_y:] = (-(b.fz + 4.0 * fym @ dym_dzn) / 6.0) * ds[:, None]
            if n_p:
                bp[r0:r0 + n_y] = (-(a.fp + 4.0 * (fym @ dym_dp + m.fp) + b.fp) / 6.0) * ds[:, None]
            # midpoint algebraic rows
            if n_z:
                r1 = n_z + n_y
                gym = m.gy
                blk[r1:, :n_y] = (gym @ dym_dyi) * as_[:, None]
                blk[r1:, n_y:k] = (gym @ dym_dzi) * as_[:, None]
                blk[r1:, k:k + n_z] = m.gz * as_[:, None]
                blk[r1:, k + n_z:k + n_z + n_y] = (gym @ dym_dyn) * as_[:, None]
                blk[r1:, k + n_z + n_y:] = (gym @ dym_dzn) * as_[:, None]
                if n_p:
                    bp[r1:] = (gym @ dym_dp + m.gp) * as_[:, None]
        if n_z:
            last = nodes[N]
            A.last_rows[:, :n_y] = last.gy * as_[:, None]
            A.last_rows[:, n_y:] = last.gz * as_[:, None]
            if n_p:
                A.last_params[:] = last.gp * as_[:, None]
        # boundary rows by differencing bc
        y0 = Y[0].copy()
        yT = Y[-1].copy()
        pp = params.copy()
        base = np.asarray(sys_.bc(y0, yT, pp))
        if getattr(sys_, "complex_step", False):
            n_bc = base.size
            j0 = _cs_jac(lambda yc: sys_.bc(yc, yT, pp), y0, n_y, n_bc)
            jT = _cs_jac(lambda yc: sys_.bc(y0, yc, pp), yT, n_y, n_bc)
        else:
            j0 = _fd_jac(lambda: np.asarray(sys_.bc(y0, yT, pp)), base, y0, n_y)
            jT = _fd_jac(lambda: np.asarray(sys_.bc(y0, yT, pp)), base, yT, n_y)
        A.bc0[:, :n_y] = j0 * bs[:, None]
        A.bcN[:, :n_y] = jT * bs[:, None]
        if n_p:
            if getattr(sys_, "complex_step", False):
                jp = _cs_jac(lambda pc: sys_.bc(y0, yT, pc), pp, n_p, base.size)
            else:
                jp = _fd_jac(lambda: np.asarray(sys_.bc(y0, yT, pp)), base, pp, n_p)
            A.bcp[:] = jp * bs[:, None]
        return A


class _SparseLu:
    def __init__(self, lu):
        self._lu = lu

    def solve(self, rhs):
        return self._lu.solve(rhs)


def _factorize_with_fallback(J):
    """Structured factorization, falling back to unrestricted sparse LU.

    The block elimination confines pivoting to adjacent block pairs; on
    rare near-degenerate configurations (tiny barrier parameter at a
    switching point) that local choice runs out of acceptable pivots even
    though the full matrix is regular. SuperLU pivots globally and handles
    those cases.
    """
    try:
        return abd.factorize(J)
    except SingularMatrixError:
        import scipy.sparse.linalg

        try:
            return _SparseLu(scipy.sparse.linalg.splu(J.to_sparse()))
        except RuntimeError as exc:
            raise SingularMatrixError(-1, f"sparse fallback: {exc}") from exc


def _norm_inf(r):
    if not np.all(np.isfinite(r)):
        return math.inf
    return float(np.max(np.abs(r)))


def _norm_2(r):
    if not np.all(np.isfinite(r)):
        return math.inf
    return float(np.linalg.norm(r))


def _lm_step(problem, J, vec, r):
    """Damped least-squares (Levenberg-Marquardt) step from ``vec``.

    Returns ``(trial, r_trial)`` with a strictly smaller residual 2-norm,
    or ``(None, None)`` if no damping value produces a decrease.
    """
    import scipy.sparse as sp
    import scipy.sparse.linalg as spla

    S = J.to_sparse().tocsr()
    g = S.T @ r
    H = (S.T @ S).tocsc()
    diag = np.maximum(H.diagonal(), 1e-12)
    r_norm = _norm_2(r)
    m_cur = _interior_margins(problem, vec)
    mu = 1e-10 * float(diag.max())
    for _ in range(16):
        try:
            lu = spla.splu(H + sp.diags(mu * diag).tocsc())
            d = lu.solve(-g)
        except RuntimeError:
            mu *= 10.0
            continue
        if np.all(np.isfinite(d)):
            lam = 1.0
            for _ in range(8):
                trial = vec + lam * d
                if _keeps_boundary_fraction(problem, trial, m_cur):
                    r_t = problem.residual(trial)
                    if (np.all(np.isfinite(r_t))
                            and _norm_2(r_t) < r_norm * (1.0 - 1e-10)):
                        return trial, r_t
                lam *= 0.25
        mu *= 10.0
    return None, None


def _interior_margins(problem, vec):
    """Pointwise boundary margins of an iterate, or None when untracked."""
    probe = getattr(problem.system, "margin", None)
    if probe is None:
        return None
    Y, Z, Zm, _ = problem.unpack(vec)
    mesh = problem.mesh
    rows = [probe(t, Y[i], Z[i]) for i, t in enumerate(mesh.nodes)]
    for i, t in enumerate(mesh.midpoints):
        rows.append(probe(t, 0.5 * (Y[i] + Y[i + 1]), Zm[i]))
    return np.concatenate(rows) if rows else None


_BOUNDARY_FRACTION = 0.1


def _keeps_boundary_fraction(problem, trial, m_cur):
    """Fraction-to-boundary rule: no margin may shrink by more than 10x.

    Without it, Newton iterates can collapse onto a constraint boundary in
    a few steps (margin orders of magnitude below the barrier scale) where
    the 1/g singularity makes every subsequent direction unusable.
    """
    if m_cur is None:
        return True
    m_t = _interior_margins(problem, trial)
    return bool(np.all(m_t >= _BOUNDARY_FRACTION * m_cur))


def _newton(problem: CollocationProblem, vec, options: SolverOptions):
    """Damped Newton on the collocation equations; returns (vec, iters, history).

    The line search uses the affine-invariant monotonicity test: a step is
    accepted when the simplified Newton correction at the trial point,
    measured through the current factorization, shrinks enough. This stays
    meaningful where the Jacobian is ill-conditioned (tiny barrier
    parameter near switching structure), unlike a raw residual norm.
    Convergence is declared on the max-norm of the scaled residual.
    """
    r = problem.residual(vec)
    history = [_norm_inf(r)]
    if not math.isfinite(history[0]):
        raise InfeasibleStartError(
            "initial guess is outside the barrier domain "
            "(interior violation at the starting point)")
    best = (vec.copy(), history[0])
    last_progress = 0
    progress_ref = history[0]
    for it in range(options.max_newton):
        if _norm_inf(r) <= options.newton_tol:
            return vec, it, history
        J = problem.jacobian(vec)
        try:
            handle = _factorize_with_fallback(J)
            step = handle.solve(-r)
        except SingularMatrixError as exc:
            raise NoConvergenceError(
                f"Jacobian factorization failed ({exc}) at residual "
                f"{_norm_inf(r):.3e}",
                best=best[0], best_residual=best[1]) from exc
        norm_step = _norm_2(step)
        lam = 1.0
        accepted = False
        m_cur = _interior_margins(problem, vec)
        while lam >= options.min_damping:
            trial = vec + lam * step
            if not _keeps_boundary_fraction(problem, trial, m_cur):
                lam *= 0.5
                continue
            r_t = problem.residual(trial)
            if np.all(np.isfinite(r_t)):
                if _norm_inf(r_t) <= options.newton_tol:
                    accepted = True
                    break
                simplified = handle.solve(-r_t)
                if _norm_2(simplified) <= (1.0 - 0.5 * lam) * norm_step:
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            # the Newton direction is unusable (near-singular linearization,
            # typical close to switching structure at tiny eps); fall back
            # to damped least-squares steps, which descend on the residual
            # norm regardless of Jacobian rank
            trial, r_t = _lm_step(problem, J, vec, r)
            if trial is None:
                if best[1] <= 100.0 * options.newton_tol:
                    # no direction decreases the residual any further and
                    # it already sits at the numerical noise floor
                    return best[0], it, history
                raise NoConvergenceError(
                    f"Newton stagnated at residual {_norm_inf(r):.3e} "
                    f"(no decrease at minimal damping {options.min_damping})",
                    best=best[0], best_residual=best[1])
        vec, r = trial, r_t
        history.append(_norm_inf(r))
        if history[-1] < best[1]:
            best = (vec.copy(), history[-1])
            # compound progress counts: many small decreases are as good
            # as one large one
            if history[-1] < 0.95 * progress_ref:
                last_progress = it
                progress_ref = history[-1]
        if it - last_progress >= options.stall_window:
            if best[1] <= 100.0 * options.newton_tol:
                # numerical noise floor of the barrier rows; the iterate
                # is converged to achievable precision
                return best[0], it, history
            # plateaued far from the tolerance: the mesh cannot represent
            # the solution at this parameter, so hand control back to the
            # refinement loop instead of burning the iteration budget
            raise NoConvergenceError(
                f"Newton stalled at residual {best[1]:.3e} "
                f"(no relative progress in {options.stall_window} iterations)",
                best=best[0], best_residual=best[1])
    if _norm_inf(r) <= options.newton_tol:
        return vec, options.max_newton, history
    raise NoConvergenceError(
        f"Newton did not reach tol {options.newton_tol:.1e} in "
        f"{options.max_newton} iterations (residual {_norm_inf(r):.3e})",
        best=best[0], best_residual=best[1])


def _node_derivatives(system, mesh, Y, Z, params):
    F = np.empty_like(Y)
    for i, t in enumerate(mesh.nodes):
        F[i] = system.f(t, Y[i], Z[i], params)
    return F


def _hermite(mesh, Y, Yp, t):
    nodes = mesh.nodes
    i = int(np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 2))
    h = nodes[i + 1] - nodes[i]
    tau = (t - nodes[i]) / h
    t2, t3 = tau * tau, tau * tau * tau
    y = ((2 * t3 - 3 * t2 + 1) * Y[i] + h * (t3 - 2 * t2 + tau) * Yp[i]
         + (-2 * t3 + 3 * t2) * Y[i + 1] + h * (t3 - t2) * Yp[i + 1])
    yp = ((6 * t2 - 6 * tau) / h * Y[i] + (3 * t2 - 4 * tau + 1) * Yp[i]
          + (-6 * t2 + 6 * tau) / h * Y[i + 1] + (3 * t2 - 2 * tau) * Yp[i + 1])
    return y, yp, i


def _quadratic_z(mesh, Z, Zm, t, i):
    nodes = mesh.nodes
    h = nodes[i + 1] - nodes[i]
    tau = (t - nodes[i]) / h
    l0 = 2.0 * (tau - 0.5) * (tau - 1.0)
    l1 = -4.0 * tau * (tau - 1.0)
    l2 = 2.0 * tau * (tau - 0.5)
    return l0 * Z[i] + l1 * Zm[i] + l2 * Z[i + 1]


def interpolate(solution: DaeSolution, t):
    """Continuous extension: C1 cubic for Y, piecewise quadratic for Z."""
    nodes = solution.mesh.nodes
    if t < nodes[0] or t > nodes[-1]:
        raise ValueError(f"t={t} outside [{nodes[0]}, {nodes[-1]}]")
    exact = np.flatnonzero(nodes == t)
    if exact.size:
        i = int(exact[0])
        return solution.Y[i].copy(), solution.Z_nodes[i].copy()
    y, _, i = _hermite(solution.mesh, solution.Y, solution.Yp, t)
    if solution.Z_nodes.shape[1]:
        z = _quadratic_z(solution.mesh, solution.Z_nodes, solution.Z_mid, t, i)
    else:
        z = np.zeros(0)
    return y, z


def estimate_residual(system: DaeSystem, solution: DaeSolution):
    """Scaled defect of the continuous interpolant, per interval.

    Samples ||S'(t) - F(t, S(t), Z(t))|| / (1 + |F|) at the two Gauss
    points of each interval and weights by the interval length, so the
    estimate behaves like the integrated defect (4th order on smooth
    problems).
    """
    mesh = solution.mesh
    nodes = mesh.nodes
    res = np.zeros(mesh.n_intervals)
    for i in range(mesh.n_intervals):
        h = nodes[i + 1] - nodes[i]
        acc = 0.0
        for off in _GAUSS_OFFSETS:
            t = nodes[i] + off * h
            y, yp, _ = _hermite(mesh, solution.Y, solution.Yp, t)
            if solution.Z_nodes.shape[1]:
                z = _quadratic_z(mesh, solution.Z_nodes, solution.Z_mid, t, i)
            else:
                z = np.zeros(0)
            f = np.asarray(system.f(t, y, z, solution.params))
            if not np.all(np.isfinite(f)):
                acc = np.inf
                break
            defect = np.abs(yp - f) / (1.0 + np.abs(f))
            acc += float(np.max(defect)) * 0.5
        res[i] = h * acc
    return res


def _consistent_z(system, t, y, z0, params, tol=1e-10, iters=12):
    """Solve the pointwise algebraic system for z with y frozen.

    Used to initialize algebraic variables at fresh mesh points: linear
    interpolation is a poor guess near switching structure at small
    barrier parameters, while the pointwise root is exactly what the
    collocation equations will ask for. Falls back to the initial guess
    when the local iteration fails.
    """
    z = z0.copy()
    n_z = z.size
    if n_z == 0:
        return z
    g0 = np.asarray(system.g(t, y, z, params))
    if not np.all(np.isfinite(g0)):
        return z0
    norm0 = np.linalg.norm(g0)
    for _ in range(iters):
        if norm0 <= tol:
            return z
        Jz = _fd_jac(lambda: np.asarray(system.g(t, y, z, params)), g0, z, n_z)
        if not np.all(np.isfinite(Jz)):
            break
        try:
            step = np.linalg.solve(Jz, -g0)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(Jz, -g0, rcond=None)
        lam = 1.0
        improved = False
        while lam >= 1e-4:
            trial = z + lam * step
            gt = np.asarray(system.g(t, y, trial, params))
            if np.all(np.isfinite(gt)) and np.linalg.norm(gt) < norm0:
                z, g0, norm0 = trial, gt, float(np.linalg.norm(gt))
                improved = True
                break
            lam *= 0.5
        if not improved:
            break
    return z


def refine_mesh(solution: DaeSolution, residuals, mesh_tol,
                max_mesh_points=10000, system=None):
    """Split offending intervals, merge over-resolved runs, re-interpolate.

    Intervals above mesh_tol are halved (split in thirds above 100x);
    adjacent pairs both below mesh_tol / 100 are merged. Returns a
    DaeSolution-shaped guess on the adapted mesh.
    """
    nodes = solution.mesh.nodes
    horizon = nodes[-1]
    new_nodes = [nodes[0]]
    i = 0
    n_int = nodes.size - 1
    while i < n_int:
        a, b = nodes[i], nodes[i + 1]
        r = residuals[i]
        if r > 100.0 * mesh_tol:
            new_nodes.extend([a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0, b])
        elif r > mesh_tol:
            new_nodes.extend([0.5 * (a + b), b])
        elif (r < mesh_tol / 100.0 and i + 1 < n_int
              and residuals[i + 1] < mesh_tol / 100.0
              and len(new_nodes) + (n_int - i) > 4):
            new_nodes.append(nodes[i + 2])
            i += 1
        else:
            new_nodes.append(b)
        i += 1
    new_nodes = np.array(new_nodes)
    if new_nodes.size > max_mesh_points:
        raise MeshLimitError(
            f"refined mesh needs {new_nodes.size} points, "
            f"budget is {max_mesh_points}")
    if new_nodes.size < 3:
        new_nodes = np.array([0.0, 0.5 * horizon, horizon])
    widths = np.diff(new_nodes)
    if np.min(widths) <= _MIN_INTERVAL_FACTOR * horizon:
        keep = np.concatenate([[True], widths > _MIN_INTERVAL_FACTOR * horizon])
        keep[-1] = True
        new_nodes = new_nodes[keep]
    mesh = Mesh(new_nodes)
    return _interp_guess(solution, mesh, system)


def _interp_guess(solution: DaeSolution, mesh: Mesh, system=None):
    """Evaluate the stored interpolants on a new mesh (guess construction).

    With a system at hand, algebraic values at the new points are made
    pointwise-consistent instead of merely interpolated.
    """
    old = solution.mesh.nodes
    n_z = solution.Z_nodes.shape[1]
    if n_z:
        bk_t = np.empty(2 * old.size - 1)
        bk_v = np.empty((bk_t.size, n_z))
        bk_t[0::2] = old
        bk_t[1::2] = solution.mesh.midpoints
        bk_v[0::2] = solution.Z_nodes
        bk_v[1::2] = solution.Z_mid
        Z = np.vstack([_linear_rows(bk_t, bk_v, t) for t in mesh.nodes])
        Zm = np.vstack([_linear_rows(bk_t, bk_v, t) for t in mesh.midpoints])
    else:
        Z = np.zeros((mesh.nodes.size, 0))
        Zm = np.zeros((mesh.n_intervals, 0))
    Y = np.empty((mesh.nodes.size, solution.Y.shape[1]))
    for j, t in enumerate(mesh.nodes):
        y_lin = _linear_rows(old, solution.Y, t)
        if solution.Yp is None:
            Y[j] = y_lin
            continue
        y_cub, _, _ = _hermite(solution.mesh, solution.Y, solution.Yp, t)
        Y[j] = y_cub
        if system is None:
            continue
        # cubic interpolation can overshoot a constraint boundary that the
        # stored trajectory hugs, landing the fresh node outside the barrier
        # domain; pull it back toward the chord between the surrounding old
        # nodes, which are inside
        with np.errstate(all="ignore"):
            for theta in (0.0, 0.5, 0.75, 0.875, 1.0):
                y = (1.0 - theta) * y_cub + theta * y_lin
                f = np.asarray(system.f(t, y, Z[j], solution.params))
                if np.all(np.isfinite(f)):
                    Y[j] = y
                    break
            else:
                Y[j] = y_lin
    if n_z:
        if system is not None:
            params = solution.params
            for j, t in enumerate(mesh.nodes):
                Z[j] = _consistent_z(system, t, Y[j], Z[j], params)
            for j, t in enumerate(mesh.midpoints):
                ym = 0.5 * (Y[j] + Y[j + 1])
                Zm[j] = _consistent_z(system, t, ym, Zm[j], params)
    return solution.copy_shell(mesh, Y, Z, Zm)


def _linear_rows(ts, vals, t):
    out = np.empty(vals.shape[1])
    for c in range(vals.shape[1]):
        out[c] = np.interp(t, ts, vals[:, c])
    return out


_MAX_NEWTON_FAILURES = 6


def _refine_after_failure(system, best: DaeSolution, options: SolverOptions):
    """Mesh for a Newton retry, from the defect of the best failed iterate.

    When the defect is informative, refine against a threshold that forces
    at least some splitting; otherwise fall back to uniform halving.
    """
    F = np.empty_like(best.Y)
    finite = True
    for i, t in enumerate(best.mesh.nodes):
        F[i] = system.f(t, best.Y[i], best.Z_nodes[i], best.params)
        finite = finite and bool(np.all(np.isfinite(F[i])))
    if finite:
        best.Yp = F
        res = estimate_residual(system, best)
        if np.any(np.isfinite(res)) and np.max(res[np.isfinite(res)]) > 0:
            cap = np.max(res[np.isfinite(res)])
            thresh = min(options.mesh_tol, cap / 4.0)
            return refine_mesh(best, np.where(np.isfinite(res), res, 2 * cap),
                               thresh, options.max_mesh_points, system)
    best.Yp = None if not finite else best.Yp
    nodes = best.mesh.nodes
    doubled = np.empty(2 * nodes.size - 1)
    doubled[0::2] = nodes
    doubled[1::2] = 0.5 * (nodes[:-1] + nodes[1:])
    if doubled.size > options.max_mesh_points:
        raise MeshLimitError(
            f"uniform halving needs {doubled.size} points, "
            f"budget is {options.max_mesh_points}")
    return _interp_guess(best, Mesh(doubled), system)


def _as_solution_guess(system, guess):
    """Normalize user guesses: fill midpoint/parameter defaults."""
    mesh = guess.mesh if isinstance(guess.mesh, Mesh) else Mesh(np.asarray(guess.mesh))
    Y = np.asarray(guess.Y, dtype=float)
    Z = np.asarray(guess.Z_nodes, dtype=float).reshape(mesh.nodes.size, system.n_z)
    Zm = getattr(guess, "Z_mid", None)
    if Zm is None or np.asarray(Zm).size == 0 and system.n_z:
        Zm = 0.5 * (Z[:-1] + Z[1:])
    Zm = np.asarray(Zm, dtype=float).reshape(mesh.n_intervals, system.n_z)
    params = getattr(guess, "params", None)
    if params is None:
        params = np.zeros(system.n_p)
    params = np.asarray(params, dtype=float).reshape(system.n_p)
    if Y.shape != (mesh.nodes.size, system.n_y):
        raise ValueError(f"guess Y has shape {Y.shape}, expected "
                         f"({mesh.nodes.size}, {system.n_y})")
    if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(Z))
            and np.all(np.isfinite(Zm)) and np.all(np.isfinite(params))):
        raise ValueError("guess values must be finite")
    return DaeSolution(mesh=mesh, Y=Y, Z_nodes=Z, Z_mid=Zm, params=params)


def solve(system: DaeSystem, guess, options: SolverOptions = None) -> DaeSolution:
    """Solve the BVP-DAE: Newton on each mesh, refine until the defect passes.

    ``guess`` is any object with mesh, Y, Z_nodes and optional Z_mid /
    params attributes. Raises InfeasibleStartError, NoConvergenceError or
    MeshLimitError; the latter two carry the best iterate seen.
    """
    options = options or SolverOptions()
    current = _as_solution_guess(system, guess)
    if abs(current.mesh.horizon - system.horizon) > 1e-9 * max(1.0, system.horizon):
        raise ValueError(
            f"guess mesh horizon {current.mesh.horizon} != system horizon "
            f"{system.horizon}")
    total_iters = 0
    history = []
    coarsened = False
    prev_converged = None
    newton_failures = 0
    last_fail_residual = None
    for sweep in range(options.max_sweeps):
        problem = CollocationProblem(system, current.mesh)
        vec = problem.pack(current.Y, current.Z_nodes, current.Z_mid, current.params)
        problem.compute_scales(vec)
        try:
            vec, iters, hist = _newton(problem, vec, options)
        except (NoConvergenceError, InfeasibleStartError) as exc:
            if prev_converged is not None:
                # refinement overshoot: return the last converged solution
                return prev_converged
            # an interpolation overshoot past a constraint boundary shows
            # up as an infinite residual at the warm start; a finer mesh
            # shrinks the overshoot, so it goes through the same retry
            best_vec = getattr(exc, "best", None)
            if best_vec is None:
                best_vec = vec
            Y, Z, Zm, params = problem.unpack(best_vec)
            best = DaeSolution(
                mesh=current.mesh, Y=Y, Z_nodes=Z, Z_mid=Zm, params=params)
            newton_failures += 1
            # when consecutive retries stop lowering the reachable residual,
            # the mesh is not the obstacle and further splitting only wastes
            # time; report failure so the caller can change strategy
            fail_res = getattr(exc, "best_residual", None)
            if fail_res is not None and math.isfinite(fail_res):
                if (last_fail_residual is not None
                        and fail_res > 0.7 * last_fail_residual):
                    if isinstance(exc, NoConvergenceError):
                        exc.best = best
                    raise
                last_fail_residual = (fail_res if last_fail_residual is None
                                      else min(fail_res, last_fail_residual))
            # a finer mesh softens the nonlinearity near switching
            # structure; retry there as long as the budget allows
            if (newton_failures <= _MAX_NEWTON_FAILURES
                    and 2 * current.mesh.n_intervals + 1
                    <= options.max_mesh_points):
                current = _refine_after_failure(system, best, options)
                continue
            if isinstance(exc, NoConvergenceError):
                exc.best = best
            raise
        total_iters += iters
        history.extend(hist)
        Y, Z, Zm, params = problem.unpack(vec)
        current = DaeSolution(mesh=current.mesh, Y=Y, Z_nodes=Z, Z_mid=Zm,
                              params=params)
        current.Yp = _node_derivatives(system, current.mesh, Y, Z, params)
        res = estimate_residual(system, current)
        current.interval_residuals = res
        current.newton_iters = total_iters
        current.residual_history = history
        if np.max(res) <= options.mesh_tol:
            can_coarsen = (not coarsened and math.isfinite(options.mesh_tol)
                           and np.any(res < options.mesh_tol / 100.0))
            if not can_coarsen:
                current.converged = True
                return current
            coarsened = True
            prev_converged = current
            prev_converged.converged = True
            trial = refine_mesh(current, res, options.mesh_tol,
                                options.max_mesh_points, system)
            if trial.mesh.nodes.size == current.mesh.nodes.size:
                return prev_converged
            current = trial
            continue
        prev_converged = None
        current = refine_mesh(current, res, options.mesh_tol,
                              options.max_mesh_points, system)
    raise NoConvergenceError(
        f"mesh refinement did not converge within {options.max_sweeps} sweeps",
        best=current, best_residual=None)
