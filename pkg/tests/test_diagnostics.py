"""Optimality diagnostics on analytically known trajectories."""

import numpy as np
import pytest

from ipoc.bvpdae import DaeSolution, Mesh, SolverOptions
from ipoc.continuation import ContinuationConfig, run_primal
from ipoc.diagnostics import (cost_integral, interiority_check, kkt_report)
from ipoc.ocp import OcpDims, OcpSpec


def _toy_spec():
    """x' = u on [0, 1], x(0)=0, x(1)=1, quadratic cost, |u| <= 2."""
    dims = OcpDims(n=1, m=1, n_g=1, n_c=2, n_h=2)
    return OcpSpec(
        dims=dims, T=1.0,
        f=lambda x, u: u.copy(),
        f_x=lambda x, u: np.zeros((1, 1)),
        f_u=lambda x, u: np.eye(1),
        l=lambda x, u: 0.5 * u[0] ** 2,
        l_x=lambda x, u: np.zeros(1),
        l_u=lambda x, u: np.array([u[0]]),
        g=lambda x: np.array([x[0] - 5.0]),
        g_x=lambda x: np.array([[1.0]]),
        c=lambda x, u: np.array([u[0] - 2.0, -2.0 - u[0]]),
        c_x=lambda x, u: np.zeros((2, 1)),
        c_u=lambda x, u: np.array([[1.0], [-1.0]]),
        h=lambda x0, xT: np.array([x0[0], xT[0] - 1.0]),
        h_x0=lambda x0, xT: np.array([[1.0], [0.0]]),
        h_xT=lambda x0, xT: np.array([[0.0], [1.0]]),
    )


def _guess():
    nodes = np.linspace(0.0, 1.0, 11)
    Y = np.column_stack([nodes, np.zeros(11)])
    Z = np.full((11, 1), 0.5)
    return DaeSolution(mesh=Mesh(nodes), Y=Y, Z_nodes=Z,
                       Z_mid=0.5 * (Z[:-1] + Z[1:]), params=np.zeros(2))


@pytest.fixture(scope="module")
def solved():
    spec = _toy_spec()
    cfg = ContinuationConfig(eps0=1.0, alpha=0.1, tol=1e-6)
    sol, mults, report = run_primal(spec, _guess(), cfg, SolverOptions())
    return spec, sol, mults, report


def test_interiority_check_signs(solved):
    spec, sol, _, _ = solved
    g_max, c_max = interiority_check(spec, sol)
    assert g_max < 0 and c_max < 0
    assert g_max == pytest.approx(-4.0, abs=1e-3)  # x stays near [0, 1]


def test_cost_integral_matches_known_value(solved):
    spec, sol, _, _ = solved
    # optimum is u == 1, cost = integral of 0.5
    assert cost_integral(spec, sol) == pytest.approx(0.5, rel=1e-4)


def test_kkt_report_near_optimum(solved):
    spec, sol, mults, report = solved
    eps = report.eps_schedule[-1]
    rep = kkt_report(spec, sol, mults, eps)
    assert rep.eps == eps
    assert rep.horizon == pytest.approx(1.0)
    assert rep.cost == pytest.approx(0.5, rel=1e-4)
    # stationarity only holds up to the barrier gradient ~ eps
    assert rep.stationarity_res < 50 * eps
    assert rep.adjoint_res < 50 * eps
    assert rep.bc_res < 1e-6
    assert rep.nonneg_viol == 0.0
    assert rep.interiority_margin_g < 0 and rep.interiority_margin_c < 0


def test_complementarity_identity_is_exact_for_barrier_multipliers(solved):
    spec, sol, mults, report = solved
    eps = report.eps_schedule[-1]
    rep = kkt_report(spec, sol, mults, eps)
    # with lam = -eps/g the integrand is the constant -eps: the trapezoid
    # quadrature then reproduces -eps*T exactly, family by family
    eps_T = eps * rep.horizon
    assert rep.comp_state == pytest.approx(eps_T, rel=1e-12)
    assert rep.comp_mixed == pytest.approx(eps_T, rel=1e-12)
    assert rep.comp_state_minus_eps_T <= 1e-8 * eps_T
    assert rep.comp_mixed_minus_eps_T <= 1e-8 * eps_T


def test_cumulative_measure_shape_and_terminal_zero(solved):
    spec, sol, mults, report = solved
    rep = kkt_report(spec, sol, mults, report.eps_schedule[-1])
    mu = rep.cumulative_measure
    assert mu.shape == (sol.mesh.nodes.size, 1)
    np.testing.assert_allclose(mu[-1], 0.0)
    # inactive path constraint: total measure is O(eps)
    assert np.max(np.abs(mu)) < 10 * report.eps_schedule[-1]


def test_report_serializes(solved):
    spec, sol, mults, report = solved
    rep = kkt_report(spec, sol, mults, report.eps_schedule[-1])
    d = rep.to_dict()
    assert set(d) >= {"eps", "cost", "stationarity_res", "adjoint_res",
                      "bc_res", "comp_state", "comp_mixed", "nonneg_viol",
                      "multiplier_l1_g", "multiplier_l1_c"}
    assert len(d["multiplier_l1_g"]) == 1
    assert len(d["multiplier_l1_c"]) == 2
