"""Continuation driver: schedule arithmetic and end-to-end toy runs."""

import numpy as np
import pytest

from ipoc.bvpdae import DaeSolution, Mesh, SolverOptions
from ipoc.continuation import (ContinuationConfig, epsilon_schedule,
                               run_primal, run_primal_dual)
from ipoc.errors import InfeasibleStartError
from ipoc.ocp import OcpDims, OcpSpec


def test_config_validation():
    with pytest.raises(ValueError):
        ContinuationConfig(eps0=0.0)
    with pytest.raises(ValueError):
        ContinuationConfig(alpha=1.0)
    with pytest.raises(ValueError):
        ContinuationConfig(alpha=0.5, eps0=1e-8, tol=1e-7)


def test_schedule_is_geometric_and_reaches_tol():
    cfg = ContinuationConfig(eps0=1.0, alpha=0.1, tol=1e-3)
    sched = epsilon_schedule(cfg)
    np.testing.assert_allclose(sched, [1.0, 0.1, 0.01, 0.001], rtol=1e-12)
    assert sched[-1] <= cfg.tol * (1.0 + 1e-12)


@pytest.mark.parametrize("eps0,alpha,tol,count", [
    # benchmark table rows: 1 + smallest K with eps0 * alpha**K <= tol
    (1.0, 0.35, 1e-7, 17),
    (1.0, 1e-7, 1e-7, 2),
    (0.1, 0.9, 2e-5, 82),
    (0.1, 0.5, 1e-7, 21),
    (0.1, 0.6, 1e-7, 29),
    (0.1, 0.25, 1e-7, 11),
])
def test_schedule_lengths_match_exact_arithmetic(eps0, alpha, tol, count):
    assert len(epsilon_schedule(ContinuationConfig(eps0, alpha, tol))) == count


def _toy_spec():
    """Drive x from 0 to 1 in unit time at quadratic cost, |u| <= 2."""
    dims = OcpDims(n=1, m=1, n_g=0, n_c=2, n_h=2)
    return OcpSpec(
        dims=dims, T=1.0,
        f=lambda x, u: u.copy(),
        f_x=lambda x, u: np.zeros((1, 1)),
        f_u=lambda x, u: np.eye(1),
        l=lambda x, u: 0.5 * u[0] ** 2,
        l_x=lambda x, u: np.zeros(1),
        l_u=lambda x, u: np.array([u[0]]),
        c=lambda x, u: np.array([u[0] - 2.0, -2.0 - u[0]]),
        c_x=lambda x, u: np.zeros((2, 1)),
        c_u=lambda x, u: np.array([[1.0], [-1.0]]),
        h=lambda x0, xT: np.array([x0[0], xT[0] - 1.0]),
        h_x0=lambda x0, xT: np.array([[1.0], [0.0]]),
        h_xT=lambda x0, xT: np.array([[0.0], [1.0]]),
    )


def _toy_guess(n_z=1):
    nodes = np.linspace(0.0, 1.0, 11)
    Y = np.column_stack([nodes, np.zeros(11)])  # (x, p)
    Z = np.zeros((11, n_z))
    Z[:, 0] = 0.5
    return DaeSolution(mesh=Mesh(nodes), Y=Y, Z_nodes=Z,
                       Z_mid=0.5 * (Z[:-1] + Z[1:]), params=np.zeros(2))


def test_primal_run_on_toy_problem():
    spec = _toy_spec()
    cfg = ContinuationConfig(eps0=1.0, alpha=0.1, tol=1e-6)
    sol, (lam_g, lam_c), report = run_primal(spec, _toy_guess(), cfg,
                                             SolverOptions())
    assert report.method == "primal"
    assert report.eps_iterations == 7
    assert report.eps_schedule[0] == 1.0
    assert len(report.newton_iters_per_eps) == 7
    assert report.final_mesh_len == sol.mesh.nodes.size
    assert report.wall_time > 0
    # the unconstrained optimum u == 1 is interior, so it survives eps -> 0
    np.testing.assert_allclose(sol.Z_nodes[:, 0], 1.0, atol=1e-4)
    assert lam_g.shape == (sol.mesh.nodes.size, 0)
    assert np.all(lam_c > 0)


def test_primal_dual_run_on_toy_problem():
    spec = _toy_spec()
    cfg = ContinuationConfig(eps0=1.0, alpha=1e-6, tol=1e-6)
    sol, report = run_primal_dual(spec, _toy_guess(n_z=3), cfg,
                                  SolverOptions())
    assert report.method == "primal-dual"
    assert report.eps_iterations == 2
    np.testing.assert_allclose(sol.Z_nodes[:, 0], 1.0, atol=1e-4)
    # inactive bounds: multipliers collapse with eps
    assert np.max(np.abs(sol.Z_nodes[:, 1:])) < 1e-2


def test_primal_rejects_non_interior_guess():
    spec = _toy_spec()
    guess = _toy_guess()
    guess.Z_nodes[4, 0] = 2.5  # outside |u| <= 2
    with pytest.raises(InfeasibleStartError) as err:
        run_primal(spec, guess, ContinuationConfig(), SolverOptions())
    assert "node 4" in str(err.value)


def test_report_round_trips_through_dict():
    spec = _toy_spec()
    cfg = ContinuationConfig(eps0=1.0, alpha=0.1, tol=1e-2)
    _, _, report = run_primal(spec, _toy_guess(), cfg, SolverOptions())
    d = report.to_dict()
    assert d["eps_iterations"] == len(d["eps_schedule"]) == 3
    assert d["method"] == "primal"
    assert d["alpha"] == 0.1 and d["tol"] == 1e-2
    assert d["final_mesh_len"] == report.final_mesh_len
