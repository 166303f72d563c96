import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbsgraph.liouville import (
    CUTOFF_INNER,
    ConeExclusionError,
    _cutoff,
    exact_disk_solution,
    flux_check,
    manufactured_disk_problem,
    solve,
    total_area,
)
from sbsgraph.mesh import triangulate
from sbsgraph.surface import builtin_surface, scale

from conftest import analysis


@settings(max_examples=200, deadline=None)
@given(rho=st.floats(0.0, 2.0))
def test_cutoff_is_a_smooth_step(rho):
    chi, d1, _ = _cutoff(np.array([rho]))
    assert 0.0 <= chi[0] <= 1.0
    assert d1[0] <= 0.0
    if rho <= CUTOFF_INNER:
        assert chi[0] == 1.0
    if rho >= 1.0:
        assert chi[0] == 0.0


def test_cutoff_derivatives_match_differences():
    r = np.linspace(0.3, 0.95, 17)
    e = 1e-6
    chi, d1, d2 = _cutoff(r)
    assert np.allclose(d1, (_cutoff(r + e)[0] - _cutoff(r - e)[0]) / (2 * e), atol=1e-6)
    assert np.allclose(d2, (_cutoff(r + e)[1] - _cutoff(r - e)[1]) / (2 * e), atol=1e-5)


def test_exact_disk_solution_solves_the_equation():
    # radial Laplacian by central differences
    r = np.array([0.1, 0.3, 0.45])
    e = 1e-4
    u = exact_disk_solution
    lap = (u(r + e) - 2 * u(r) + u(r - e)) / e**2 + (u(r + e) - u(r - e)) / (2 * e * r)
    assert np.allclose(lap, 2 * math.pi * np.exp(2 * u(r)), rtol=1e-5)


def test_manufactured_problem_converges_at_second_order_coarse():
    rep = manufactured_disk_problem(h=0.1)
    assert rep.linf[1] < rep.linf[0]
    assert 1.6 < rep.order_linf < 2.4


@pytest.mark.parametrize("key", ["octagon", "decagon", "sheared"])
def test_newton_converged(key):
    f = analysis(key).field
    assert f.residual <= 1e-8
    assert f.newton_iterations <= 20


@pytest.mark.parametrize("key", ["octagon", "decagon"])
def test_area_and_flux(key):
    an = analysis(key)
    assert an.area == pytest.approx(2.0, rel=1e-2)
    for rep in an.fluxes:
        assert rep.rel_error <= 0.02


def test_u_is_continuous_across_glued_edges():
    f = analysis("sheared").field
    s = f.surface
    for a, b in s.pairings:
        z0, z1 = s.edge_endpoints(a)
        for t in (0.3, 0.5, 0.7):
            z = z0 + t * (z1 - z0)
            w = z + s.translation(a)
            ua, ga, Ha, _ = f.evaluate(a[0], z, strict=False)
            ub, gb, Hb, _ = f.evaluate(b[0], w, strict=False)
            assert abs(ua[0] - ub[0]) < 1e-10
            assert np.allclose(ga, gb, atol=1e-8)


def test_gradient_is_consistent_with_values():
    f = analysis("decagon").field
    rng = np.random.default_rng(1)
    pts = 0.6 * (rng.random(20) - 0.5) + 0.6j * (rng.random(20) - 0.5)
    e = 1e-5
    g = f.grad(0, pts)
    dx = (f.u(0, pts + e) - f.u(0, pts - e)) / (2 * e)
    dy = (f.u(0, pts + 1j * e) - f.u(0, pts - 1j * e)) / (2 * e)
    # values and gradients are separate second-order reconstructions, so they
    # agree to O(h^2) rather than to roundoff
    tol = 2 * f.mesh.h**2
    assert np.max(np.abs(g[:, 0] - dx)) < tol
    assert np.max(np.abs(g[:, 1] - dy)) < tol


def test_recovered_hessian_satisfies_the_equation():
    f = analysis("octagon").field
    rng = np.random.default_rng(7)
    pts = 0.8 * (rng.random(30) - 0.5) + 0.8j * (rng.random(30) - 0.5)
    u, _, H = f.derivatives(0, pts)
    lap = H[:, 0, 0] + H[:, 1, 1]
    assert np.allclose(lap, 2 * math.pi * np.exp(2 * u), rtol=0.05)


def test_strict_evaluation_refuses_cone_points():
    f = analysis("octagon").field
    v = complex(f.surface.polygons[0][0])
    with pytest.raises(ConeExclusionError):
        f.u(0, v * (1 - 1e-4))


def test_solution_is_similarity_equivariant():
    """u for c * rho is u for rho shifted by -ln|c| (the metric is conformal)."""
    s = builtin_surface("sheared-decagon", s=0.3, t=1.1)
    c = 2 * np.exp(1j * math.pi / 3)
    h = 0.05 * s.diameter
    f0 = solve(triangulate(s, h))
    f1 = solve(triangulate(scale(s, c), abs(c) * h))
    pts = np.array([0.1 + 0.2j, -0.3 + 0.05j, 0.25 - 0.3j])
    assert np.allclose(f1.u(0, c * pts), f0.u(0, pts) - math.log(abs(c)), atol=1e-6)
    assert total_area(f1) == pytest.approx(total_area(f0), rel=1e-8)


def test_flux_radius_must_fit_the_neighbourhood():
    f = analysis("octagon").field
    with pytest.raises(ValueError):
        flux_check(f, f.surface.cone_classes[0], radius=10.0)
