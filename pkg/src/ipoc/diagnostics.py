"""Optimality diagnostics measured against the original first-order system.

The inner solver only certifies the penalized equations at one epsilon;
these reports quantify how close such a solution is to a true extremal of
the constrained problem: control stationarity, adjoint defect, boundary
residuals, integrated complementarity, multiplier signs and interiority
margins. All integrals are trapezoidal on the (nonuniform) solution mesh,
which keeps them consistent with node-based multiplier storage. Nothing
here raises on questionable inputs; the numbers degrade instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .bvpdae import DaeSolution, interpolate
from .ocp import OcpSpec

__all__ = ["KktReport", "kkt_report", "interiority_check", "cost_integral"]


@dataclass
class KktReport:
    """Scalar optimality measures plus the multiplier trajectories.

    ``comp_state``/``comp_mixed`` are max_i |integral of g_i * lam_i|; on a
    converged barrier solution each integral equals -eps*T, so the
    ``*_minus_eps_T`` fields isolate the deviation from that identity.
    ``cumulative_measure`` is mu(t) = -integral_t^T lam_g, zero at T, whose
    steep segments locate boundary arcs as eps shrinks.
    """

    eps: float
    horizon: float
    cost: float
    stationarity_res: float
    adjoint_res: float
    bc_res: float
    comp_state: float
    comp_mixed: float
    comp_state_minus_eps_T: float
    comp_mixed_minus_eps_T: float
    nonneg_viol: float
    interiority_margin_g: float
    interiority_margin_c: float
    multiplier_l1_g: np.ndarray = field(repr=False, default=None)
    multiplier_l1_c: np.ndarray = field(repr=False, default=None)
    lam_g: np.ndarray = field(repr=False, default=None)
    lam_c: np.ndarray = field(repr=False, default=None)
    cumulative_measure: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> Dict:
        out = {}
        for name in ("eps", "horizon", "cost", "stationarity_res",
                     "adjoint_res", "bc_res", "comp_state", "comp_mixed",
                     "comp_state_minus_eps_T", "comp_mixed_minus_eps_T",
                     "nonneg_viol", "interiority_margin_g",
                     "interiority_margin_c"):
            out[name] = float(getattr(self, name))
        out["multiplier_l1_g"] = [float(v) for v in np.atleast_1d(self.multiplier_l1_g)]
        out["multiplier_l1_c"] = [float(v) for v in np.atleast_1d(self.multiplier_l1_c)]
        return out


def interiority_check(spec: OcpSpec, solution: DaeSolution):
    """Worst-case node values of g and c (negative means strictly interior)."""
    d = spec.dims
    n, m = d.n, d.m
    g_max = -np.inf
    c_max = -np.inf
    for k in range(solution.Y.shape[0]):
        x = solution.Y[k, :n]
        if d.n_g:
            g_max = max(g_max, float(np.max(spec.g(x))))
        if d.n_c:
            u = solution.Z_nodes[k, :m]
            c_max = max(c_max, float(np.max(spec.c(x, u))))
    return g_max, c_max


def cost_integral(spec: OcpSpec, solution: DaeSolution) -> float:
    """Objective value: terminal cost plus Simpson quadrature of the running cost."""
    d = spec.dims
    n, m = d.n, d.m
    nodes = solution.mesh.nodes
    lvals = np.array([
        spec.l(solution.Y[k, :n], solution.Z_nodes[k, :m])
        for k in range(nodes.size)
    ])
    total = 0.0
    for i in range(nodes.size - 1):
        h = nodes[i + 1] - nodes[i]
        ym, zm = interpolate(solution, nodes[i] + 0.5 * h)
        lm = spec.l(ym[:n], zm[:m])
        total += h / 6.0 * (lvals[i] + 4.0 * lm + lvals[i + 1])
    return float(total + spec.phi(solution.Y[-1, :n]))


def _trapz(nodes, vals):
    return np.trapezoid(vals, nodes, axis=0) if vals.size else np.zeros(vals.shape[1])


def _finite_max(arr):
    if arr.size == 0:
        return 0.0
    val = np.max(np.abs(arr))
    return float(val) if np.isfinite(val) else float("inf")


def kkt_report(spec: OcpSpec, solution: DaeSolution, multipliers,
               eps: float) -> KktReport:
    """Evaluate the stationarity system of the constrained problem.

    ``multipliers`` is the (lam_g, lam_c) pair of node arrays — recovered
    for a primal run, native solution components for a primal-dual run.
    """
    d = spec.dims
    n, m = d.n, d.m
    nodes = solution.mesh.nodes
    n_nodes = nodes.size
    lam_g, lam_c = multipliers
    lam_g = np.nan_to_num(np.asarray(lam_g, dtype=float).reshape(n_nodes, d.n_g),
                          nan=np.inf)
    lam_c = np.nan_to_num(np.asarray(lam_c, dtype=float).reshape(n_nodes, d.n_c),
                          nan=np.inf)

    X = solution.Y[:, :n]
    P = solution.Y[:, n:]
    U = solution.Z_nodes[:, :m]

    stat = np.zeros((n_nodes, m))
    adj = np.zeros((n_nodes, n))
    gvals = np.zeros((n_nodes, d.n_g))
    cvals = np.zeros((n_nodes, d.n_c))
    for k in range(n_nodes):
        x, p, u = X[k], P[k], U[k]
        hu = spec.l_u(x, u) + spec.f_u(x, u).T @ p
        if d.n_c:
            cvals[k] = spec.c(x, u)
            hu = hu + spec.c_u(x, u).T @ lam_c[k]
        stat[k] = hu
        hx = spec.l_x(x, u) + spec.f_x(x, u).T @ p
        if d.n_g:
            gvals[k] = spec.g(x)
            hx = hx + spec.g_x(x).T @ lam_g[k]
        if d.n_c:
            hx = hx + spec.c_x(x, u).T @ lam_c[k]
        pdot = solution.Yp[k, n:] if solution.Yp is not None else -hx
        adj[k] = pdot + hx

    comp_g = _trapz(nodes, gvals * lam_g) if d.n_g else np.zeros(0)
    comp_c = _trapz(nodes, cvals * lam_c) if d.n_c else np.zeros(0)
    horizon = float(nodes[-1] - nodes[0])
    comp_state = _finite_max(comp_g)
    comp_mixed = _finite_max(comp_c)
    eps_T = eps * horizon
    comp_state_dev = _finite_max(np.abs(comp_g + eps_T)) if d.n_g else 0.0
    comp_mixed_dev = _finite_max(np.abs(comp_c + eps_T)) if d.n_c else 0.0

    lam_all = np.hstack([lam_g, lam_c])
    nonneg = 0.0
    if lam_all.size:
        finite = lam_all[np.isfinite(lam_all)]
        nonneg = float(max(0.0, -np.min(finite))) if finite.size else float("inf")
    l1_g = _trapz(nodes, np.abs(lam_g)) if d.n_g else np.zeros(0)
    l1_c = _trapz(nodes, np.abs(lam_c)) if d.n_c else np.zeros(0)

    g_margin, c_margin = interiority_check(spec, solution)

    lam = solution.params
    x0, xT = X[0], X[-1]
    bc_rows = [np.asarray(spec.h(x0, xT)),
               P[0] + spec.h_x0(x0, xT).T @ lam,
               P[-1] - spec.phi_x(xT) - spec.h_xT(x0, xT).T @ lam]
    bc_res = _finite_max(np.concatenate(bc_rows))

    mu = np.zeros((n_nodes, d.n_g))
    if d.n_g:
        vals = np.where(np.isfinite(lam_g), lam_g, 0.0)
        for i in range(n_nodes - 2, -1, -1):
            h = nodes[i + 1] - nodes[i]
            mu[i] = mu[i + 1] - 0.5 * h * (vals[i] + vals[i + 1])

    return KktReport(
        eps=float(eps),
        horizon=horizon,
        cost=cost_integral(spec, solution),
        stationarity_res=_finite_max(stat),
        adjoint_res=_finite_max(adj),
        bc_res=bc_res,
        comp_state=comp_state,
        comp_mixed=comp_mixed,
        comp_state_minus_eps_T=comp_state_dev,
        comp_mixed_minus_eps_T=comp_mixed_dev,
        nonneg_viol=nonneg,
        interiority_margin_g=g_margin,
        interiority_margin_c=c_margin,
        multiplier_l1_g=l1_g,
        multiplier_l1_c=l1_c,
        lam_g=lam_g,
        lam_c=lam_c,
        cumulative_measure=mu,
    )
