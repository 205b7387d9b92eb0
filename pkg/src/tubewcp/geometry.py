"""Parametric curves and surfaces in R^2 / R^3.

Curves and surfaces are thin immutable wrappers around position callables.
Every callable is vectorised: a curve maps an array of parameters of shape
``(...)`` to points of shape ``(..., d)``; a surface maps two broadcastable
arrays to ``(..., 3)``.  Analytic derivatives are used when supplied, else
fourth-order central differences with step ``H_GEO``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import (
    DegenerateParametrization,
    SingularCurve,
    VanishingCurvature,
)

H_GEO = 1e-4
KAPPA_MIN = 1e-10

# 4th-order central stencils: (offsets, weights, power of h in the denominator)
_STENCILS = {
    1: ((-2, -1, 1, 2), (1 / 12, -8 / 12, 8 / 12, -1 / 12), 1),
    2: ((-2, -1, 0, 1, 2), (-1 / 12, 16 / 12, -30 / 12, 16 / 12, -1 / 12), 2),
    3: ((-3, -2, -1, 1, 2, 3), (1 / 8, -1.0, 13 / 8, -13 / 8, 1.0, -1 / 8), 3),
}


def central_difference(f, x, order=1, h=H_GEO):
    """Fourth-order central difference of ``f`` at ``x`` (orders 1 to 3)."""
    offsets, weights, power = _STENCILS[order]
    x = np.asarray(x, dtype=float)
    acc = None
    for o, w in zip(offsets, weights):
        term = w * np.asarray(f(x + o * h), dtype=float)
        acc = term if acc is None else acc + term
    return acc / h**power


def _stack(*comps):
    comps = np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in comps])
    return np.stack(comps, axis=-1)


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _norm(a):
    return np.sqrt(_dot(a, a))


# ----------------------------------------------------------------------------
# Curves
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Curve:
    """A regular parametrised curve ``x -> R^d``.

    ``derivatives`` holds analytic callbacks for orders 1, 2, 3 (any prefix
    may be given).  ``domain`` is the natural parameter interval; periodic
    curves identify its endpoints.
    """

    position: Callable
    derivatives: tuple = ()
    domain: tuple = (-math.inf, math.inf)
    periodic: bool = False
    name: str = ""
    params: dict = field(default_factory=dict)

    dim = 0

    def __call__(self, x):
        return np.asarray(self.position(np.asarray(x, dtype=float)), dtype=float)

    def derivative(self, x, order=1):
        if order == 0:
            return self(x)
        if order <= len(self.derivatives):
            return np.asarray(self.derivatives[order - 1](np.asarray(x, dtype=float)), dtype=float)
        # differentiate the highest analytic derivative available
        m = min(len(self.derivatives), order - 1)
        base = self.position if m == 0 else self.derivatives[m - 1]
        return central_difference(base, x, order - m)

    def speed(self, x):
        return _norm(self.derivative(x, 1))

    def tangent(self, x):
        d1 = self.derivative(x, 1)
        return d1 / _norm(d1)[..., None]

    def is_unit_speed(self, x, tol=1e-8):
        return bool(np.all(np.abs(self.speed(x) - 1.0) <= tol))

    def with_domain(self, domain, periodic=None):
        return type(self)(
            self.position,
            self.derivatives,
            tuple(float(d) for d in domain),
            self.periodic if periodic is None else periodic,
            self.name,
            dict(self.params),
        )


class PlaneCurve(Curve):
    dim = 2

    def normal(self, x):
        """Tangent rotated by +90 degrees."""
        t = self.tangent(x)
        return _stack(-t[..., 1], t[..., 0])


class SpaceCurve(Curve):
    dim = 3


def plane_curvature(curve: PlaneCurve, x):
    """Signed curvature, positive when the curve turns towards ``normal``.

    For unit-speed input this is ``position''(x) . N(x)``; the quotient form
    used here is the same number and stays valid for any regular
    parametrisation.
    """
    d1 = curve.derivative(x, 1)
    d2 = curve.derivative(x, 2)
    cross = d1[..., 0] * d2[..., 1] - d1[..., 1] * d2[..., 0]
    return cross / _norm(d1) ** 3


@dataclass(frozen=True)
class FrenetFrame:
    T: np.ndarray
    N: np.ndarray
    B: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray


def space_curvature(curve: SpaceCurve, x):
    """Unsigned curvature and torsion (right-handed sign convention)."""
    d1 = curve.derivative(x, 1)
    d2 = curve.derivative(x, 2)
    d3 = curve.derivative(x, 3)
    c = np.cross(d1, d2)
    cn = _norm(c)
    kappa = cn / _norm(d1) ** 3
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = _dot(c, d3) / cn**2
    return kappa, tau


def frenet_frame(curve: SpaceCurve, x) -> FrenetFrame:
    """Frenet frame (T, N, B) with det[T N B] = +1.

    Torsion follows the right-handed convention N' = -kappa T + tau B,
    so the helix (a cos s/c, a sin s/c, b s/c) has tau = b / (a^2 + b^2).
    """
    d1 = curve.derivative(x, 1)
    d2 = curve.derivative(x, 2)
    kappa, tau = space_curvature(curve, x)
    if np.any(~(kappa > KAPPA_MIN)):
        raise VanishingCurvature(f"curvature {np.min(kappa):.3g} <= {KAPPA_MIN:g}; Frenet frame undefined")
    T = d1 / _norm(d1)[..., None]
    w = d2 - T * _dot(T, d2)[..., None]
    N = w / _norm(w)[..., None]
    B = np.cross(T, N)
    return FrenetFrame(T, N, B, kappa, tau)


# ----------------------------------------------------------------------------
# Arc-length reparametrisation
# ----------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def arc_length_reparametrize(curve: Curve, tol=1e-10, domain=None, panels=512):
    """Return the unit-speed reparametrisation of ``curve`` on ``[0, L]``.

    The returned curve carries analytic derivatives (chain rule through the
    inverse arc-length map), so downstream frames do not difference twice.
    """
    a, b = domain if domain is not None else curve.domain
    if not (math.isfinite(a) and math.isfinite(b)) or b <= a:
        raise ValueError("arc_length_reparametrize needs a finite parameter interval")

    grid = np.linspace(a, b, 4097)
    v = curve.speed(grid)
    vmax = float(np.max(v))
    i = int(np.argmin(v))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    vmin = float(v[i])
    if hi > lo:
        res = minimize_scalar(lambda s: float(curve.speed(s)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        vmin = min(vmin, float(res.fun))
    if not vmax > 0 or vmin <= 1e-8 * vmax:
        raise SingularCurve(f"speed vanishes on [{a}, {b}] (min {vmin:.3g})")

    edges = np.linspace(a, b, panels + 1)
    width = edges[1] - edges[0]

    def _partial(t0, t):
        # integral of the speed from t0 to t with a 10-point Gauss rule
        half = 0.5 * (t - t0)
        nodes = t0[..., None] + half[..., None] * (_GL_NODES + 1.0)
        return half * np.sum(_GL_WEIGHTS * curve.speed(nodes), axis=-1)

    cum = np.concatenate([[0.0], np.cumsum(_partial(edges[:-1], edges[1:]))])
    length = float(cum[-1])

    def arclen(t):
        t = np.asarray(t, dtype=float)
        j = np.clip(np.floor((t - a) / width).astype(int), 0, panels - 1)
        return cum[j] + _partial(edges[j], t)

    def param_of(s):
        s = np.asarray(s, dtype=float)
        t = np.interp(s, cum, edges)
        for _ in range(8):
            step = (arclen(t) - s) / curve.speed(t)
            t = np.clip(t - step, a, b)
            if np.all(np.abs(step) <= 1e-3 * tol):
                break
        return t

    def pos(s):
        return curve(param_of(s))

    def _jets(s):
        t = param_of(s)
        p1, p2, p3 = (curve.derivative(t, k) for k in (1, 2, 3))
        vel = _norm(p1)
        vt = _dot(p1, p2) / vel
        vtt = (_dot(p2, p2) + _dot(p1, p3)) / vel - _dot(p1, p2) ** 2 / vel**3
        u = 1.0 / vel
        ut = -vt / vel**2
        utt = -vtt / vel**2 + 2 * vt**2 / vel**3
        us = u * ut
        uss = u * (ut**2 + u * utt)
        return p1, p2, p3, u[..., None], us[..., None], uss[..., None]

    def d1(s):
        p1, _, _, u, _, _ = _jets(s)
        return p1 * u

    def d2(s):
        p1, p2, _, u, us, _ = _jets(s)
        return p2 * u**2 + p1 * us

    def d3(s):
        p1, p2, p3, u, us, uss = _jets(s)
        return p3 * u**3 + 3 * p2 * u * us + p1 * uss

    return type(curve)(
        pos,
        (d1, d2, d3),
        (0.0, length),
        curve.periodic,
        curve.name,
        dict(curve.params, reparametrized=True),
    )


# ----------------------------------------------------------------------------
# Surfaces
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamSurface:
    """A parametrised surface ``(x1, x2) -> R^3``.

    ``first`` returns ``(p1, p2)``; ``second`` returns ``(p11, p12, p22)``.
    """

    position: Callable
    first: Optional[Callable] = None
    second: Optional[Callable] = None
    domain: tuple = ((-math.inf, math.inf), (-math.inf, math.inf))
    periodic: tuple = (False, False)
    name: str = ""
    params: dict = field(default_factory=dict)

    dim = 3

    def __call__(self, x1, x2):
        return np.asarray(self.position(np.asarray(x1, float), np.asarray(x2, float)), dtype=float)

    def partials(self, x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        if self.first is not None:
            p1, p2 = self.first(x1, x2)
            return np.asarray(p1, float), np.asarray(p2, float)
        return (central_difference(lambda s: self.position(s, x2), x1),
                central_difference(lambda s: self.position(x1, s), x2))

    def second_partials(self, x1, x2):
        x1 = np.asarray(x1, float)
        x2 = np.asarray(x2, float)
        if self.second is not None:
            return tuple(np.asarray(p, float) for p in self.second(x1, x2))
        if self.first is not None:
            p11 = central_difference(lambda s: self.first(s, x2)[0], x1)
            p12 = central_difference(lambda s: self.first(x1, s)[0], x2)
            p22 = central_difference(lambda s: self.first(x1, s)[1], x2)
            return p11, p12, p22
        p11 = central_difference(lambda s: self.position(s, x2), x1, 2)
        p22 = central_difference(lambda s: self.position(x1, s), x2, 2)
        p12 = central_difference(
            lambda s: central_difference(lambda r: self.position(r, s), x1), x2)
        return p11, p12, p22

    def unit_normal(self, x1, x2):
        """(p1 ^ p2) / |p1 ^ p2|, with no re-orientation."""
        p1, p2 = self.partials(x1, x2)
        n = np.cross(p1, p2)
        nn = _norm(n)
        if np.any(~(nn > 0)):
            raise DegenerateParametrization("p1 ^ p2 vanishes")
        return n / nn[..., None]

    def normal_derivatives(self, x1, x2):
        """Partial derivatives (dE/dx1, dE/dx2) of the unit normal."""
        p1, p2 = self.partials(x1, x2)
        p11, p12, p22 = self.second_partials(x1, x2)
        n = np.cross(p1, p2)
        nn = _norm(n)[..., None]
        E = n / nn
        out = []
        for dn in (np.cross(p11, p2) + np.cross(p1, p12), np.cross(p12, p2) + np.cross(p1, p22)):
            out.append((dn - E * _dot(E, dn)[..., None]) / nn)
        return tuple(out)


@dataclass(frozen=True)
class FundamentalForms:
    I: np.ndarray
    II: np.ndarray
    III: np.ndarray
    H: np.ndarray
    K: np.ndarray


def _sym2(a, b, c):
    a, b, c = np.broadcast_arrays(a, b, c)
    return np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)


def fundamental_forms(surface: ParamSurface, x1, x2) -> FundamentalForms:
    """First, second and third fundamental forms with mean and Gauss curvature.

    II is taken as p_ab . E and III as dE/dx_a . dE/dx_b, so the identity
    III = -K I + 2H II is a genuine consistency check rather than a tautology.
    """
    p1, p2 = surface.partials(x1, x2)
    E_ = _dot(p1, p1)
    F_ = _dot(p1, p2)
    G_ = _dot(p2, p2)
    det = E_ * G_ - F_**2
    if np.any(~(det > 0)):
        raise DegenerateParametrization("EG - F^2 <= 0")
    nrm = surface.unit_normal(x1, x2)
    p11, p12, p22 = surface.second_partials(x1, x2)
    e = _dot(p11, nrm)
    f = _dot(p12, nrm)
    g = _dot(p22, nrm)
    dE1, dE2 = surface.normal_derivatives(x1, x2)
    H = (e * G_ - 2 * f * F_ + g * E_) / (2 * det)
    K = (e * g - f**2) / det
    return FundamentalForms(
        I=_sym2(E_, F_, G_),
        II=_sym2(e, f, g),
        III=_sym2(_dot(dE1, dE1), _dot(dE1, dE2), _dot(dE2, dE2)),
        H=H,
        K=K,
    )


# ----------------------------------------------------------------------------
# Named example manifolds
# ----------------------------------------------------------------------------


def circle(radius=1.0):
    """Counter-clockwise circle of ``radius`` in arc length; normal points inward."""
    r = float(radius)

    def pos(x):
        return _stack(r * np.cos(x / r), r * np.sin(x / r))

    def d1(x):
        return _stack(-np.sin(x / r), np.cos(x / r))

    def d2(x):
        return _stack(-np.cos(x / r) / r, -np.sin(x / r) / r)

    def d3(x):
        return _stack(np.sin(x / r) / r**2, -np.cos(x / r) / r**2)

    return PlaneCurve(pos, (d1, d2, d3), (0.0, 2 * math.pi * r), True, "circle", {"radius": r})


def line(direction_angle=0.0, offset=0.0):
    """Unit-speed straight line in the plane, shifted by ``offset`` along its normal."""
    c, s = math.cos(direction_angle), math.sin(direction_angle)
    o = float(offset)

    def pos(x):
        return _stack(c * x - s * o, s * x + c * o)

    def d1(x):
        return _stack(c + 0 * x, s + 0 * x)

    def d0(x):
        return _stack(0 * x, 0 * x)

    return PlaneCurve(pos, (d1, d0, d0), (-math.inf, math.inf), False, "line",
                      {"direction_angle": float(direction_angle), "offset": o})


def helix(a=1.0, b=1.0):
    """Unit-speed helix (a cos(x/c), a sin(x/c), b x/c), c = sqrt(a^2 + b^2)."""
    a = float(a)
    b = float(b)
    c = math.hypot(a, b)

    def pos(x):
        return _stack(a * np.cos(x / c), a * np.sin(x / c), b * x / c)

    def d1(x):
        return _stack(-a / c * np.sin(x / c), a / c * np.cos(x / c), b / c + 0 * x)

    def d2(x):
        return _stack(-a / c**2 * np.cos(x / c), -a / c**2 * np.sin(x / c), 0 * x)

    def d3(x):
        return _stack(a / c**3 * np.sin(x / c), -a / c**3 * np.cos(x / c), 0 * x)

    return SpaceCurve(pos, (d1, d2, d3), (-math.inf, math.inf), False, "helix", {"a": a, "b": b})


def arctan_spiral():
    """x -> (sin x, cos x, arctan x): bounded curvature, coils that close up."""

    def pos(x):
        return _stack(np.sin(x), np.cos(x), np.arctan(x))

    def d1(x):
        return _stack(np.cos(x), -np.sin(x), 1 / (1 + x**2))

    def d2(x):
        return _stack(-np.sin(x), -np.cos(x), -2 * x / (1 + x**2) ** 2)

    def d3(x):
        return _stack(-np.cos(x), np.sin(x), (6 * x**2 - 2) / (1 + x**2) ** 3)

    return SpaceCurve(pos, (d1, d2, d3), (-math.inf, math.inf), False, "arctan-spiral", {})


def sphere(radius=1.0):
    """Sphere with x1 = longitude, x2 = polar angle, so p1 ^ p2 points inward."""
    r = float(radius)

    def pos(u, t):
        return _stack(r * np.sin(t) * np.cos(u), r * np.sin(t) * np.sin(u), r * np.cos(t))

    def first(u, t):
        pu = _stack(-r * np.sin(t) * np.sin(u), r * np.sin(t) * np.cos(u), 0 * u * t)
        pt = _stack(r * np.cos(t) * np.cos(u), r * np.cos(t) * np.sin(u), -r * np.sin(t) + 0 * u)
        return pu, pt

    def second(u, t):
        puu = _stack(-r * np.sin(t) * np.cos(u), -r * np.sin(t) * np.sin(u), 0 * u * t)
        put = _stack(-r * np.cos(t) * np.sin(u), r * np.cos(t) * np.cos(u), 0 * u * t)
        ptt = _stack(-r * np.sin(t) * np.cos(u), -r * np.sin(t) * np.sin(u), -r * np.cos(t) + 0 * u)
        return puu, put, ptt

    return ParamSurface(pos, first, second, ((0.0, 2 * math.pi), (0.0, math.pi)), (True, False),
                        "sphere", {"radius": r})


def cylinder(radius=1.0):
    """Cylinder with x1 = height, x2 = angle, so p1 ^ p2 points to the axis."""
    r = float(radius)

    def pos(z, t):
        return _stack(r * np.cos(t) + 0 * z, r * np.sin(t) + 0 * z, z + 0 * t)

    def first(z, t):
        return _stack(0 * z * t, 0 * z * t, 1 + 0 * z * t), _stack(-r * np.sin(t) + 0 * z, r * np.cos(t) + 0 * z, 0 * z * t)

    def second(z, t):
        zero = _stack(0 * z * t, 0 * z * t, 0 * z * t)
        return zero, zero, _stack(-r * np.cos(t) + 0 * z, -r * np.sin(t) + 0 * z, 0 * z * t)

    return ParamSurface(pos, first, second, ((-math.inf, math.inf), (0.0, 2 * math.pi)), (False, True),
                        "cylinder", {"radius": r})


def torus(R=2.0, r=0.5):
    """Torus with x1 = tube angle, x2 = azimuth, so p1 ^ p2 points to the core circle."""
    R = float(R)
    r = float(r)

    def pos(v, u):
        w = R + r * np.cos(v)
        return _stack(w * np.cos(u), w * np.sin(u), r * np.sin(v) + 0 * u)

    def first(v, u):
        w = R + r * np.cos(v)
        pv = _stack(-r * np.sin(v) * np.cos(u), -r * np.sin(v) * np.sin(u), r * np.cos(v) + 0 * u)
        pu = _stack(-w * np.sin(u), w * np.cos(u), 0 * u * v)
        return pv, pu

    def second(v, u):
        w = R + r * np.cos(v)
        pvv = _stack(-r * np.cos(v) * np.cos(u), -r * np.cos(v) * np.sin(u), -r * np.sin(v) + 0 * u)
        pvu = _stack(r * np.sin(v) * np.sin(u), -r * np.sin(v) * np.cos(u), 0 * u * v)
        puu = _stack(-w * np.cos(u), -w * np.sin(u), 0 * u * v)
        return pvv, pvu, puu

    return ParamSurface(pos, first, second, ((0.0, 2 * math.pi), (0.0, 2 * math.pi)), (True, True),
                        "torus", {"R": R, "r": r})


def plane():
    """The flat plane z = 0 with Cartesian parameters."""

    def pos(x, y):
        return _stack(x + 0 * y, y + 0 * x, 0 * x * y)

    def first(x, y):
        return _stack(1 + 0 * x * y, 0 * x * y, 0 * x * y), _stack(0 * x * y, 1 + 0 * x * y, 0 * x * y)

    def second(x, y):
        zero = _stack(0 * x * y, 0 * x * y, 0 * x * y)
        return zero, zero, zero

    return ParamSurface(pos, first, second, ((-math.inf, math.inf), (-math.inf, math.inf)), (False, False),
                        "plane", {})


MANIFOLDS = {
    "circle": circle,
    "line": line,
    "helix": helix,
    "arctan-spiral": arctan_spiral,
    "sphere": sphere,
    "cylinder": cylinder,
    "torus": torus,
    "plane": plane,
}


def make_manifold(name: str, params: Optional[dict] = None):
    """Build a named example manifold; raises KeyError for unknown ids."""
    try:
        factory = MANIFOLDS[name]
    except KeyError:
        raise KeyError(f"unknown manifold id {name!r}; known: {sorted(MANIFOLDS)}") from None
    return factory(**(params or {}))


def base_dimension(base) -> int:
    return 2 if isinstance(base, ParamSurface) else 1


def codimension(base) -> int:
    if isinstance(base, PlaneCurve):
        return 1
    if isinstance(base, SpaceCurve):
        return 2
    if isinstance(base, ParamSurface):
        return 1
    raise TypeError(f"unsupported base {type(base).__name__}")


def sample_params(domain: Sequence[float], n: int, periodic=False):
    """Uniform samples of an interval; periodic intervals drop the right end."""
    a, b = domain
    if periodic:
        return a + (b - a) * np.arange(n) / n
    return np.linspace(a, b, n)
