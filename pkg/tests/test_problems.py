"""Benchmark bundle data: dynamics values, guesses, configs, validity."""

import numpy as np
import pytest

from ipoc import problems
from ipoc.ocp import validate


def test_registry_keys():
    assert set(problems.REGISTRY) == {"vdp", "zermelo", "goddard"}
    for name, factory in problems.REGISTRY.items():
        assert factory().name == name


# --- Van der Pol ------------------------------------------------------------

def test_vdp_pointwise_values():
    b = problems.vdp()
    spec = b.spec
    np.testing.assert_allclose(spec.f(np.array([1.0, 1.0]), np.zeros(1)),
                               [1.0, -1.0])
    np.testing.assert_allclose(spec.g(np.array([0.0, -0.4])), [0.0])
    np.testing.assert_allclose(spec.c(np.zeros(2), np.array([1.0])),
                               [0.0, -2.0])
    h = spec.h(np.array([1.0, 1.0]), np.array([0.2, 0.0]))
    np.testing.assert_allclose(h, [0.0, 0.0, 0.2 ** 2 - 0.04])
    assert spec.T == 4.0


def test_vdp_guess_block():
    b = problems.vdp()
    for method in ("primal", "primal-dual"):
        guess = b.make_guess(method)
        t = guess.mesh.nodes
        assert t.size == 41
        np.testing.assert_allclose(t[1] - t[0], 0.1)
        np.testing.assert_allclose(guess.Y[:, :2], 1.0)  # states
        np.testing.assert_allclose(guess.Y[:, 2:], 0.0)  # adjoints
        np.testing.assert_allclose(guess.Z_nodes[:, 0], 0.0)  # control
    assert b.make_guess("primal").Z_nodes.shape[1] == 1
    assert b.make_guess("primal-dual").Z_nodes.shape[1] == 1 + 1 + 2


def test_vdp_configs():
    b = problems.vdp()
    assert (b.config_primal.eps0, b.config_primal.alpha) == (1.0, 0.35)
    assert b.config_primal_dual.alpha == 1e-7
    assert b.config("primal") is b.config_primal
    with pytest.raises(ValueError):
        b.config("simplex")


# --- Zermelo ----------------------------------------------------------------

def test_zermelo_pointwise_values():
    b = problems.zermelo()
    free = b.original
    # drift at mid-channel
    np.testing.assert_allclose(
        free.f(np.array([0.0, 0.5]), np.array([np.pi / 2.0, 0.0]))[0], 3.05)
    np.testing.assert_allclose(free.g(np.array([10.0, 0.4])), [4.0])
    np.testing.assert_allclose(free.g(np.array([14.0, 0.4])), [0.0])
    assert free.free_time and not b.spec.free_time
    assert b.spec.dims.n == 3 and b.spec.dims.n_c == 4


def test_zermelo_guesses_differ_by_method():
    b = problems.zermelo()
    primal = b.make_guess("primal")
    pd = b.make_guess("primal-dual")
    assert primal.mesh.nodes.size == pd.mesh.nodes.size == 101
    # horizon state and adjoint guess shared
    np.testing.assert_allclose(primal.Y[:, 2], 20.0)
    np.testing.assert_allclose(primal.Y[:, 5], 1.0)
    # the straight line crosses the obstacle; the detour must not
    g = b.spec.g
    worst_line = max(float(g(x)[0]) for x in pd.Y[:, :3])
    worst_detour = max(float(g(x)[0]) for x in primal.Y[:, :3])
    assert worst_line > 0
    assert worst_detour < -0.1


def test_zermelo_configs():
    b = problems.zermelo()
    assert (b.config_primal.eps0, b.config_primal.alpha) == (0.1, 0.9)
    assert b.config_primal_dual.alpha == 0.5


# --- Goddard ----------------------------------------------------------------

def test_goddard_pointwise_values():
    b = problems.goddard()
    free = b.original
    x = np.array([1.0, 0.1, 1.0])
    # drag at sea level: 310 * 0.01
    np.testing.assert_allclose(free.g(x), [20.0 * 3.1 - 10.0])
    f = free.f(x, np.array([1.0]))
    np.testing.assert_allclose(f, [0.1, (1.0 - 3.1) / 1.0 - 1.0, -2.0])
    np.testing.assert_allclose(free.c(x, np.array([3.5]))[0], 0.0)
    assert b.spec.dims.n == 4


def test_goddard_guess_block():
    b = problems.goddard()
    guess = b.make_guess("primal")
    assert guess.mesh.nodes.size == 101
    np.testing.assert_allclose(guess.Y[0, :4], [1.2, 0.05, 1.0, 0.3])
    np.testing.assert_allclose(guess.Y[0, 4:], [0.0, 1.0, 0.0, 0.0])
    np.testing.assert_allclose(guess.Z_nodes[:, 0], 1.0)


def test_goddard_configs():
    b = problems.goddard()
    assert b.config_primal.alpha == 0.6
    assert b.config_primal_dual.alpha == 0.25


# --- cross-cutting ----------------------------------------------------------

@pytest.mark.parametrize("name", ["vdp", "zermelo", "goddard"])
def test_spec_validates_at_guess_point(name):
    b = problems.REGISTRY[name]()
    guess = b.make_guess("primal")
    n, m = b.spec.dims.n, b.spec.dims.m
    probe = (guess.Y[0, :n], guess.Z_nodes[0, :m] + 0.05)
    report = validate(b.spec, probe)
    assert report.max_deviation < 1e-4


@pytest.mark.parametrize("name", ["vdp", "zermelo", "goddard"])
def test_guess_arrays_consistent(name):
    b = problems.REGISTRY[name]()
    d = b.spec.dims
    for method in ("primal", "primal-dual"):
        guess = b.make_guess(method)
        n_nodes = guess.mesh.nodes.size
        assert guess.Y.shape == (n_nodes, 2 * d.n)
        assert guess.Z_mid.shape[0] == n_nodes - 1
        assert guess.params.shape == (d.n_h,)
    # fresh objects each call: mutating one guess must not leak
    g1 = b.make_guess("primal")
    g1.Y[:] = 0.0
    assert not np.allclose(b.make_guess("primal").Y, 0.0)


@pytest.mark.parametrize("name", ["vdp", "zermelo", "goddard"])
def test_reference_stats_shape(name):
    b = problems.REGISTRY[name]()
    for method in ("primal", "primal-dual"):
        stats = b.reference_stats[method]
        assert {"alpha", "eps_iterations", "final_mesh_len",
                "exec_time_s"} <= set(stats)
        assert stats["alpha"] == b.config(method).alpha
