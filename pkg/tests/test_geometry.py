import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from tubewcp.errors import SingularCurve, VanishingCurvature
from tubewcp.geometry import (
    PlaneCurve,
    SpaceCurve,
    arc_length_reparametrize,
    arctan_spiral,
    central_difference,
    circle,
    codimension,
    cylinder,
    frenet_frame,
    fundamental_forms,
    helix,
    line,
    make_manifold,
    plane,
    plane_curvature,
    space_curvature,
    sphere,
    torus,
)

s = sp.symbols("s", real=True)


def _sympy_frenet(expr, x0):
    """Curvature and torsion of a symbolic space curve at x0."""
    r = sp.Matrix(expr)
    d1, d2, d3 = r.diff(s), r.diff(s, 2), r.diff(s, 3)
    cross = d1.cross(d2)
    kappa = cross.norm() / d1.norm() ** 3
    tau = cross.dot(d3) / cross.norm() ** 2
    return float(kappa.subs(s, x0)), float(tau.subs(s, x0))


def test_central_difference_orders():
    x = np.linspace(-1, 1, 7)
    assert np.allclose(central_difference(np.sin, x, 1), np.cos(x), atol=1e-10)
    assert np.allclose(central_difference(np.sin, x, 2), -np.sin(x), atol=1e-6)


def test_helix_frenet_matches_symbolic():
    a, b = 1.0, 1.0
    c = math.hypot(a, b)
    expr = [a * sp.cos(s / c), a * sp.sin(s / c), b * s / c]
    xs = np.linspace(-3, 3, 7)
    kappa, tau = space_curvature(helix(a, b), xs)
    for x, k, t in zip(xs, kappa, tau):
        ks, ts = _sympy_frenet(expr, x)
        assert k == pytest.approx(ks, abs=1e-12)
        assert t == pytest.approx(ts, abs=1e-12)
    assert np.allclose(kappa, 0.5) and np.allclose(tau, 0.5)


def test_spiral_frenet_matches_symbolic():
    expr = [sp.sin(s), sp.cos(s), sp.atan(s)]
    xs = np.array([-2.0, 0.3, 1.0, 5.0, 40.0])
    kappa, tau = space_curvature(arctan_spiral(), xs)
    for x, k, t in zip(xs, kappa, tau):
        ks, ts = _sympy_frenet(expr, x)
        assert k == pytest.approx(ks, rel=1e-10)
        assert t == pytest.approx(ts, rel=1e-8, abs=1e-12)


def test_frenet_frame_is_orthonormal_and_right_handed():
    f = frenet_frame(helix(2.0, 0.5), np.linspace(0, 5, 11))
    for A, B in [(f.T, f.N), (f.N, f.B), (f.T, f.B)]:
        assert np.allclose(np.sum(A * B, -1), 0, atol=1e-12)
    assert np.allclose(np.cross(f.T, f.N), f.B, atol=1e-12)


def test_frenet_frame_rejects_straight_line():
    straight = SpaceCurve(lambda x: np.stack([x, 0 * x, 0 * x], -1))
    with pytest.raises(VanishingCurvature):
        frenet_frame(straight, np.array([0.0, 1.0]))


def test_plane_curvature_signs():
    assert np.allclose(plane_curvature(circle(2.0), np.linspace(0, 4, 5)), 0.5)
    assert np.allclose(plane_curvature(line(0.3), np.linspace(0, 4, 5)), 0.0)
    cw = PlaneCurve(lambda x: np.stack([np.cos(-x), np.sin(-x)], -1))
    assert np.allclose(plane_curvature(cw, np.array([0.1, 1.0])), -1.0, atol=1e-6)


def test_arc_length_reparametrization_gives_unit_speed():
    ellipse = PlaneCurve(lambda x: np.stack([2 * np.cos(x), np.sin(x)], -1), domain=(0.0, 2 * math.pi))
    rep = arc_length_reparametrize(ellipse)
    s_vals = np.linspace(rep.domain[0], rep.domain[1], 50)
    assert rep.is_unit_speed(s_vals, tol=1e-8)
    # both parametrisations start at the same point, where curvature must agree
    assert np.allclose(rep(np.array([0.0])), ellipse(np.array([0.0])), atol=1e-12)
    k_orig = plane_curvature(ellipse, np.array([0.0]))[0]
    assert plane_curvature(rep, np.array([0.0]))[0] == pytest.approx(k_orig, rel=1e-6)


def test_arc_length_reparametrization_of_circle_is_identity():
    slow = PlaneCurve(lambda x: np.stack([np.cos(2 * x), np.sin(2 * x)], -1), domain=(0.0, math.pi))
    rep = arc_length_reparametrize(slow)
    assert rep.domain[1] == pytest.approx(2 * math.pi, rel=1e-12)
    x = np.linspace(0, 6, 13)
    assert np.allclose(rep(x), circle()(x), atol=1e-9)
    assert np.allclose(plane_curvature(rep, x), 1.0, atol=1e-6)


def test_singular_parametrization_rejected():
    cusp = PlaneCurve(lambda x: np.stack([x**3, x**2], -1), domain=(-1.0, 1.0))
    with pytest.raises(SingularCurve):
        arc_length_reparametrize(cusp)


def _sympy_forms(expr, u0, v0):
    u, v = sp.symbols("u v", real=True)
    P = sp.Matrix([e.subs({"U": u, "V": v}) for e in expr])
    pu, pv = P.diff(u), P.diff(v)
    n = pu.cross(pv)
    n = n / n.norm()
    E, F, G = pu.dot(pu), pu.dot(pv), pv.dot(pv)
    e, f, g = P.diff(u, 2).dot(n), P.diff(u).diff(v).dot(n), P.diff(v, 2).dot(n)
    vals = [sp.N(x.subs({u: u0, v: v0})) for x in (E, F, G, e, f, g)]
    E, F, G, e, f, g = map(float, vals)
    K = (e * g - f * f) / (E * G - F * F)
    H = (e * G - 2 * f * F + g * E) / (2 * (E * G - F * F))
    return np.array([[E, F], [F, G]]), np.array([[e, f], [f, g]]), H, K


@pytest.mark.parametrize(
    "surface, expr, point",
    [
        (sphere(), ["sin(V)*cos(U)", "sin(V)*sin(U)", "cos(V)"], (0.4, 1.1)),
        (torus(2.0, 0.5), ["(2+cos(U)/2)*cos(V)", "(2+cos(U)/2)*sin(V)", "sin(U)/2"], (0.7, 2.0)),
        (cylinder(1.5), ["3*cos(V)/2", "3*sin(V)/2", "U"], (0.2, 0.9)),
    ],
)
def test_fundamental_forms_match_symbolic(surface, expr, point):
    I, II, H, K = _sympy_forms([sp.sympify(e) for e in expr], *point)
    ff = fundamental_forms(surface, np.array(point[0]), np.array(point[1]))
    assert np.allclose(ff.I, I, atol=1e-12)
    assert np.allclose(ff.II, II, atol=1e-12)
    assert ff.H == pytest.approx(H, abs=1e-12)
    assert ff.K == pytest.approx(K, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 6.0), st.floats(0.2, 2.9))
def test_third_form_identity_on_torus(u, v):
    ff = fundamental_forms(torus(), np.array(u), np.array(v))
    assert np.allclose(ff.III, -ff.K * ff.I + 2 * ff.H * ff.II, atol=1e-10)


def test_unit_sphere_curvatures():
    ff = fundamental_forms(sphere(), np.array([0.3, 2.0]), np.array([1.0, 0.5]))
    assert np.allclose(ff.K, 1.0)
    assert np.allclose(np.abs(ff.H), 1.0)


def test_registry():
    assert codimension(make_manifold("helix")) == 2
    assert codimension(make_manifold("sphere")) == 1
    assert codimension(make_manifold("circle", {"radius": 3})) == 1
    assert make_manifold("plane").name == plane().name
    with pytest.raises(KeyError):
        make_manifold("klein-bottle")
