"""Tests for the collocation BVP-DAE solver core."""

import numpy as np
import pytest

from ipoc import bvpdae
from ipoc.bvpdae import (DaeSolution, Mesh, SolverOptions, estimate_residual,
                         interpolate, refine_mesh, solve)
from ipoc.errors import NoConvergenceError
from ipoc.transcription import DaeSystem


# --- meshes -----------------------------------------------------------------

def test_mesh_invariants():
    m = Mesh(np.array([0.0, 0.25, 1.0]))
    assert m.n_intervals == 2
    assert m.horizon == 1.0
    np.testing.assert_allclose(m.midpoints, [0.125, 0.625])
    np.testing.assert_allclose(m.widths, [0.25, 0.75])


@pytest.mark.parametrize("nodes", [
    [0.0, 1.0],                   # too few nodes
    [0.0, 0.5, 0.5, 1.0],         # not strictly increasing
    [0.1, 0.5, 1.0],              # does not start at 0
    [0.0, 1e-14, 1.0],            # vanishing interval
])
def test_mesh_rejects_bad_nodes(nodes):
    with pytest.raises(ValueError):
        Mesh(np.array(nodes))


def test_options_validated():
    with pytest.raises(ValueError):
        SolverOptions(newton_tol=0.0)
    with pytest.raises(ValueError):
        SolverOptions(mesh_tol=-1.0)
    with pytest.raises(ValueError):
        SolverOptions(max_newton=0)


# --- model systems ----------------------------------------------------------

def _exponential_system():
    """y' = y, y(0) = 1; exact solution exp(t)."""
    return DaeSystem(
        n_y=1, n_z=0, n_p=0, horizon=1.0,
        f=lambda t, y, z, p: y.copy(),
        g=lambda t, y, z, p: np.zeros(0),
        bc=lambda y0, yT, p: np.array([y0[0] - 1.0]),
    )


def _algebraic_system():
    """y' = z, z = -y (so y = exp(-t)); exercises the algebraic path."""
    return DaeSystem(
        n_y=1, n_z=1, n_p=0, horizon=1.0,
        f=lambda t, y, z, p: z.copy(),
        g=lambda t, y, z, p: z + y,
        bc=lambda y0, yT, p: np.array([y0[0] - 1.0]),
    )


def _uniform_guess(system, n_nodes, y0=1.0):
    mesh = Mesh(np.linspace(0.0, system.horizon, n_nodes))
    Y = np.full((n_nodes, system.n_y), y0)
    Z = np.zeros((n_nodes, system.n_z))
    return DaeSolution(mesh=mesh, Y=Y, Z_nodes=Z,
                       Z_mid=np.zeros((n_nodes - 1, system.n_z)),
                       params=np.zeros(system.n_p))


def _fixed_mesh_options(**kw):
    # an effectively infinite mesh tolerance freezes the mesh
    kw.setdefault("mesh_tol", 1e100)
    return SolverOptions(**kw)


# --- solving ----------------------------------------------------------------

def test_solves_linear_ode_to_high_accuracy():
    sol = solve(_exponential_system(), _uniform_guess(_exponential_system(), 21),
                SolverOptions())
    assert sol.converged
    t = sol.mesh.nodes
    np.testing.assert_allclose(sol.Y[:, 0], np.exp(t), rtol=1e-7)


def test_solves_semi_explicit_dae():
    sol = solve(_algebraic_system(), _uniform_guess(_algebraic_system(), 21),
                SolverOptions())
    t = sol.mesh.nodes
    np.testing.assert_allclose(sol.Y[:, 0], np.exp(-t), rtol=1e-6)
    np.testing.assert_allclose(sol.Z_nodes[:, 0], -np.exp(-t), rtol=1e-6)


def test_unknown_parameter_recovered():
    # y' = p (constant), y(0) = 0, y(1) = 3  =>  p = 3
    system = DaeSystem(
        n_y=1, n_z=0, n_p=1, horizon=1.0,
        f=lambda t, y, z, p: np.array([p[0]]),
        g=lambda t, y, z, p: np.zeros(0),
        bc=lambda y0, yT, p: np.array([y0[0], yT[0] - 3.0]),
        rhs_uses_params=True,
    )
    sol = solve(system, _uniform_guess(system, 11, y0=0.0), SolverOptions())
    assert sol.params[0] == pytest.approx(3.0, abs=1e-9)


def test_fourth_order_defect_decay():
    """Halving h must shrink the defect ~16x (fitted order >= 3.7)."""
    system = _exponential_system()
    sizes = [8, 16, 32, 64]
    defects = []
    for n_int in sizes:
        sol = solve(system, _uniform_guess(system, n_int + 1),
                    _fixed_mesh_options())
        defects.append(np.max(estimate_residual(system, sol)))
    orders = np.log2(np.array(defects[:-1]) / np.array(defects[1:]))
    assert np.min(orders) >= 3.7


def test_newton_failure_carries_best_iterate():
    # infeasible boundary conditions: y(0)=1 and y(0)=2 simultaneously
    system = DaeSystem(
        n_y=1, n_z=0, n_p=1, horizon=1.0,
        f=lambda t, y, z, p: y.copy(),
        g=lambda t, y, z, p: np.zeros(0),
        bc=lambda y0, yT, p: np.array([y0[0] - 1.0, y0[0] - 2.0]),
    )
    with pytest.raises(NoConvergenceError):
        solve(system, _uniform_guess(system, 5), _fixed_mesh_options())


# --- interpolation ----------------------------------------------------------

def test_interpolate_exact_at_nodes_and_accurate_between():
    system = _exponential_system()
    sol = solve(system, _uniform_guess(system, 33), SolverOptions())
    t_nodes = sol.mesh.nodes
    y_n, _ = interpolate(sol, t_nodes[5])
    assert y_n[0] == sol.Y[5, 0]
    t_mid = 0.5 * (t_nodes[5] + t_nodes[6])
    y_m, _ = interpolate(sol, t_mid)
    assert y_m[0] == pytest.approx(np.exp(t_mid), rel=1e-6)


def test_interpolate_rejects_out_of_range():
    system = _exponential_system()
    sol = solve(system, _uniform_guess(system, 9), SolverOptions())
    with pytest.raises(ValueError):
        interpolate(sol, -0.1)
    with pytest.raises(ValueError):
        interpolate(sol, 1.1)


# --- mesh refinement --------------------------------------------------------

def _refinement_base():
    system = _exponential_system()
    return solve(system, _uniform_guess(system, 5), _fixed_mesh_options())


def test_refine_splits_bad_interval_in_half():
    sol = _refinement_base()
    res = np.array([1e-9, 1e-9, 5e-7, 1e-9])
    out = refine_mesh(sol, res, mesh_tol=1e-7)
    assert out.mesh.nodes.size == sol.mesh.nodes.size + 1
    mid = 0.5 * (sol.mesh.nodes[2] + sol.mesh.nodes[3])
    assert np.any(np.isclose(out.mesh.nodes, mid))


def test_refine_splits_terrible_interval_in_thirds():
    sol = _refinement_base()
    res = np.array([1e-9, 1e-9, 5e-5, 1e-9])
    out = refine_mesh(sol, res, mesh_tol=1e-7)
    assert out.mesh.nodes.size == sol.mesh.nodes.size + 2


def test_refine_merges_over_resolved_pairs():
    system = _exponential_system()
    sol = solve(system, _uniform_guess(system, 9), _fixed_mesh_options())
    res = np.full(8, 1e-12)
    out = refine_mesh(sol, res, mesh_tol=1e-6)
    assert out.mesh.nodes.size < sol.mesh.nodes.size


def test_refine_respects_point_budget():
    from ipoc.errors import MeshLimitError
    sol = _refinement_base()
    res = np.full(4, 1e-3)
    with pytest.raises(MeshLimitError):
        refine_mesh(sol, res, mesh_tol=1e-7, max_mesh_points=5)


def test_adaptive_solve_meets_defect_tolerance():
    system = _exponential_system()
    opts = SolverOptions(mesh_tol=1e-9)
    sol = solve(system, _uniform_guess(system, 5), opts)
    assert sol.converged
    assert np.max(sol.interval_residuals) <= 1e-9
    t = sol.mesh.nodes
    np.testing.assert_allclose(sol.Y[:, 0], np.exp(t), rtol=1e-9)


# --- assembled Jacobian vs finite differences -------------------------------

def test_jacobian_matches_finite_differences():
    rng = np.random.default_rng(0)
    system = DaeSystem(
        n_y=2, n_z=1, n_p=1, horizon=1.0,
        f=lambda t, y, z, p: np.array([y[1] + 0.3 * z[0],
                                       -np.sin(y[0]) + 0.1 * z[0] ** 2]),
        g=lambda t, y, z, p: np.array([z[0] - np.cos(y[0] * y[1])]),
        bc=lambda y0, yT, p: np.array([y0[0] - 0.5, yT[1] - 0.1,
                                       p[0] - y0[1]]),
    )
    mesh = Mesh(np.linspace(0.0, 1.0, 5))
    guess = DaeSolution(
        mesh=mesh,
        Y=rng.standard_normal((5, 2)),
        Z_nodes=rng.standard_normal((5, 1)),
        Z_mid=rng.standard_normal((4, 1)),
        params=rng.standard_normal(1),
    )
    problem = bvpdae.CollocationProblem(system, mesh)
    vec = problem.pack(guess.Y, guess.Z_nodes, guess.Z_mid, guess.params)
    J = problem.jacobian(vec).to_dense()
    r0 = problem.residual(vec)
    fd = np.empty_like(J)
    for j in range(vec.size):
        h = 1e-7 * (1.0 + abs(vec[j]))
        hi = vec.copy(); hi[j] += h
        lo = vec.copy(); lo[j] -= h
        fd[:, j] = (problem.residual(hi) - problem.residual(lo)) / (2 * h)
    scale = 1.0 + np.max(np.abs(fd))
    assert np.max(np.abs(J - fd)) / scale <= 1e-5
    assert r0.shape == (vec.size,)
