"""Fermi coordinate charts on normal tubes.

A chart over a base submanifold M with parameters x (dimension m) and an
orthonormal normal frame E^1..E^k maps (x, y) to phi(x) + sum_i y^i E^i(x).
Chart coordinates are ordered (x^1..x^m, y^1..y^k), so metric matrices are
n x n with n = m + k.

Normal frames:
  * plane curve: E^1 = tangent rotated by +90 degrees;
  * space curve: E^1 = principal normal, E^2 = N x T (the binormal with the
    orientation that makes dE^1/dx = -kappa T - tau E^2 for the right-handed
    torsion);
  * surface: E^1 = (p1 ^ p2)/|p1 ^ p2|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateMetric, EmptySample, OutOfChart, UnsupportedBase
from .geometry import (
    ParamSurface,
    PlaneCurve,
    SpaceCurve,
    fundamental_forms,
    plane_curvature,
    space_curvature,
)

DET_MIN = 1e-12
K1_SAFETY = 1.05


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _norm(a):
    return np.sqrt(_dot(a, a))


@dataclass(frozen=True)
class FermiChart:
    """A chart V x B(0, eps) over ``base``.

    ``domain`` is ``(a, b)`` for curves and ``((a1, b1), (a2, b2))`` for
    surfaces; ``periodic`` holds one flag per base direction.
    """

    base: object
    eps: float
    domain: tuple
    periodic: tuple

    @property
    def m(self):
        return 2 if isinstance(self.base, ParamSurface) else 1

    @property
    def k(self):
        return 2 if isinstance(self.base, SpaceCurve) else 1

    @property
    def n(self):
        return self.m + self.k

    @property
    def intervals(self):
        return (tuple(self.domain),) if self.m == 1 else tuple(tuple(d) for d in self.domain)

    # -- coordinates -------------------------------------------------------

    def coords(self, x, y):
        """Normalise (x, y) to arrays of shape (..., m) and (..., k)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.m == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if self.k == 1 and (y.ndim == 0 or y.shape[-1] != 1):
            y = y[..., None]
        x, y = np.broadcast_arrays(x[..., :, None], y[..., None, :])
        return x[..., :, 0].copy(), y[..., 0, :].copy()

    def contains(self, x, y):
        X, Y = self.coords(x, y)
        ok = _norm(Y) < self.eps
        for a, ((lo, hi), per) in enumerate(zip(self.intervals, self.periodic)):
            if not per:
                span = 1e-12 * max(1.0, abs(lo), abs(hi))
                ok &= (X[..., a] >= lo - span) & (X[..., a] <= hi + span)
        return ok

    def _check(self, x, y):
        if not np.all(self.contains(x, y)):
            raise OutOfChart(f"point outside V x B(0, {self.eps}) for chart over {self.base.name!r}")

    # -- base data ---------------------------------------------------------

    def _split(self, X):
        return (X[..., 0],) if self.m == 1 else (X[..., 0], X[..., 1])

    def base_point(self, X):
        return self.base(*self._split(X))

    def base_jacobian(self, X):
        """d phi / dx^a, shape (..., m, n_ambient)."""
        if self.m == 1:
            return self.base.derivative(X[..., 0], 1)[..., None, :]
        return np.stack(self.base.partials(X[..., 0], X[..., 1]), axis=-2)

    def frame(self, X):
        """Normal frame E^i(x), shape (..., k, n_ambient)."""
        b = self.base
        if isinstance(b, PlaneCurve):
            t = b.tangent(X[..., 0])
            return np.stack([-t[..., 1], t[..., 0]], axis=-1)[..., None, :]
        if isinstance(b, SpaceCurve):
            T, N, _ = self._space_frame(X[..., 0])
            return np.stack([N, np.cross(N, T)], axis=-2)
        if isinstance(b, ParamSurface):
            return b.unit_normal(X[..., 0], X[..., 1])[..., None, :]
        raise UnsupportedBase(type(b).__name__)

    def _space_frame(self, x):
        d1 = self.base.derivative(x, 1)
        d2 = self.base.derivative(x, 2)
        T = d1 / _norm(d1)[..., None]
        w = d2 - T * _dot(T, d2)[..., None]
        wn = _norm(w)
        if np.any(~(wn > 0)):
            from .errors import VanishingCurvature

            raise VanishingCurvature("principal normal undefined where curvature vanishes")
        return T, w / wn[..., None], w

    def frame_derivatives(self, X):
        """dE^i/dx^a by the chain rule on analytic base derivatives, shape (..., m, k, n)."""
        b = self.base
        if isinstance(b, PlaneCurve):
            x = X[..., 0]
            d1 = b.derivative(x, 1)
            d2 = b.derivative(x, 2)
            v = _norm(d1)[..., None]
            T = d1 / v
            dT = (d2 - T * _dot(T, d2)[..., None]) / v
            dE = np.stack([-dT[..., 1], dT[..., 0]], axis=-1)
            return dE[..., None, None, :]
        if isinstance(b, SpaceCurve):
            x = X[..., 0]
            d1 = b.derivative(x, 1)
            d2 = b.derivative(x, 2)
            d3 = b.derivative(x, 3)
            v = _norm(d1)[..., None]
            T, N, w = self._space_frame(x)
            dT = w / v
            dw = d3 - dT * _dot(T, d2)[..., None] - T * (_dot(dT, d2) + _dot(T, d3))[..., None]
            wn = _norm(w)[..., None]
            dN = (dw - N * _dot(N, dw)[..., None]) / wn
            dE2 = np.cross(dN, T) + np.cross(N, dT)
            return np.stack([dN, dE2], axis=-2)[..., None, :, :]
        if isinstance(b, ParamSurface):
            dE1, dE2 = b.normal_derivatives(X[..., 0], X[..., 1])
            return np.stack([dE1, dE2], axis=-2)[..., :, None, :]
        raise UnsupportedBase(type(b).__name__)

    # -- serialisation -----------------------------------------------------

    def to_dict(self):
        return {
            "base": {"id": self.base.name, "params": dict(self.base.params)},
            "k": self.k,
            "eps": float(self.eps),
            "domain": [list(d) for d in self.intervals],
            "periodic": [bool(p) for p in self.periodic],
        }


def make_chart(base, eps, domain=None, periodic=None):
    """Build a chart, defaulting the domain and periodicity to the base's."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if domain is None:
        domain = base.domain
    if isinstance(base, ParamSurface):
        domain = tuple(tuple(float(v) for v in d) for d in domain)
        flat = [v for d in domain for v in d]
        default_periodic = tuple(base.periodic)
    else:
        domain = tuple(float(v) for v in domain)
        flat = list(domain)
        default_periodic = (bool(base.periodic),)
    if not all(math.isfinite(v) for v in flat):
        raise ValueError("chart domain must be finite")
    if periodic is None:
        periodic = default_periodic
    periodic = tuple(bool(p) for p in np.atleast_1d(periodic))
    return FermiChart(base, float(eps), domain, periodic)


def chart_from_dict(doc):
    from .geometry import make_manifold

    base = make_manifold(doc["base"]["id"], doc["base"].get("params"))
    domain = doc["domain"]
    if not isinstance(base, ParamSurface):
        domain = domain[0]
    return make_chart(base, doc["eps"], domain, doc.get("periodic"))


# ----------------------------------------------------------------------------
# Metric samples
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricSample:
    g: np.ndarray
    det: np.ndarray
    inv: np.ndarray

    @property
    def sqrt_det(self):
        return np.sqrt(self.det)


def metric_sample(g, check=True):
    g = 0.5 * (g + np.swapaxes(g, -1, -2))
    det = np.linalg.det(g)
    if check and np.any(~(det > DET_MIN)):
        raise DegenerateMetric(f"det of pullback metric {np.min(det):.3g} <= {DET_MIN:g}")
    with np.errstate(all="ignore"):
        inv = np.linalg.inv(g) if np.all(det != 0) else np.linalg.pinv(g)
    return MetricSample(g, det, inv)


def fermi_map(chart: FermiChart, x, y, check=True):
    """phi(x) + sum_i y^i E^i(x)."""
    if check:
        chart._check(x, y)
    X, Y = chart.coords(x, y)
    return chart.base_point(X) + np.sum(Y[..., :, None] * chart.frame(X), axis=-2)


def fermi_jacobian(chart: FermiChart, X, Y):
    """Rows d Phi / dx^a (a < m) followed by d Phi / dy^j, shape (..., n, n_ambient)."""
    J = chart.base_jacobian(X) + np.einsum("...i,...aid->...ad", Y, chart.frame_derivatives(X))
    return np.concatenate([J, chart.frame(X)], axis=-2)


def pullback_metric_direct(chart: FermiChart, x, y, check=True):
    """g_ab = d_a Phi . d_b Phi from the chart Jacobian."""
    if check:
        chart._check(x, y)
    X, Y = chart.coords(x, y)
    J = fermi_jacobian(chart, X, Y)
    return metric_sample(J @ np.swapaxes(J, -1, -2), check=check)


def base_metric(chart: FermiChart, x):
    """h = h' (+) identity on the normal block, shape (..., n, n)."""
    X, _ = chart.coords(x, np.zeros(chart.k))
    P = chart.base_jacobian(X)
    hp = P @ np.swapaxes(P, -1, -2)
    h = np.zeros(X.shape[:-1] + (chart.n, chart.n))
    h[..., : chart.m, : chart.m] = hp
    h[..., chart.m:, chart.m:] = np.eye(chart.k)
    return h


def base_density_mu(chart: FermiChart, x):
    """sqrt(det h') with h' the induced metric on the base."""
    from .errors import DegenerateParametrization

    X, _ = chart.coords(x, np.zeros(chart.k))
    P = chart.base_jacobian(X)
    det = np.linalg.det(P @ np.swapaxes(P, -1, -2))
    if np.any(~(det > 0)):
        raise DegenerateParametrization("induced base metric is singular")
    return np.sqrt(det)


@dataclass(frozen=True)
class RtsTensors:
    """Coefficient matrices of the y-expansion of the pullback metric.

    Each entry is an n x n symmetric matrix in chart coordinates, so that
    g = h + sum_i y^i (r[i] + 2 t[i]) + sum_ij y^i y^j s[i, j].
    """

    h: np.ndarray
    r: np.ndarray  # (..., k, n, n)
    t: np.ndarray  # (..., k, n, n)
    s: np.ndarray  # (..., k, k, n, n)

    def metric(self, y):
        y = np.asarray(y, dtype=float)
        if y.ndim == 0:
            y = y[None]
        lin = np.einsum("...i,...iab->...ab", y, self.r + 2 * self.t)
        quad = np.einsum("...i,...j,...ijab->...ab", y, y, self.s)
        return self.h + lin + quad


def rts_tensors(chart: FermiChart, x):
    X, _ = chart.coords(x, np.zeros(chart.k))
    m, k, n = chart.m, chart.k, chart.n
    P = chart.base_jacobian(X)  # (..., m, d)
    dE = chart.frame_derivatives(X)  # (..., m, k, d)
    E = chart.frame(X)  # (..., k, d)
    lead = X.shape[:-1]

    pe = np.einsum("...ad,...bid->...iab", P, dE)  # d_a phi . d_b E^i
    r = np.zeros(lead + (k, n, n))
    r[..., :m, :m] = pe + np.swapaxes(pe, -1, -2)

    ee = np.einsum("...aid,...jd->...iaj", dE, E)  # d_a E^i . E^j
    t = np.zeros(lead + (k, n, n))
    t[..., :m, m:] = 0.5 * ee
    t[..., m:, :m] = 0.5 * np.swapaxes(ee, -1, -2)

    dd = np.einsum("...aid,...bjd->...ijab", dE, dE)
    s = np.zeros(lead + (k, k, n, n))
    s[..., :m, :m] = 0.5 * (dd + np.swapaxes(np.swapaxes(dd, -1, -2), -3, -4))
    return RtsTensors(base_metric(chart, x), r, t, s)


def pullback_metric_closed_form(chart: FermiChart, x, y, check=True):
    """Pullback metric from curvature data alone.

    Plane curve:  v^2 (1 - kappa y)^2 dx^2 + dy^2.
    Space curve:  v^2 [(1 - kappa y1)^2 + tau^2 (y1^2 + y2^2)] dx^2
                  - 2 tau v y1 dx dy2 + 2 tau v y2 dx dy1 + dy1^2 + dy2^2.
    Surface:      I - 2 y II + y^2 III + dy^2.
    Here v is the base speed (1 for arc length).
    """
    if check:
        chart._check(x, y)
    X, Y = chart.coords(x, y)
    b = chart.base
    lead = X.shape[:-1]
    g = np.zeros(lead + (chart.n, chart.n))
    if isinstance(b, PlaneCurve):
        xx = X[..., 0]
        v = b.speed(xx)
        kap = plane_curvature(b, xx)
        g[..., 0, 0] = v**2 * (1 - kap * Y[..., 0]) ** 2
        g[..., 1, 1] = 1.0
    elif isinstance(b, SpaceCurve):
        xx = X[..., 0]
        v = b.speed(xx)
        kap, tau = space_curvature(b, xx)
        y1, y2 = Y[..., 0], Y[..., 1]
        g[..., 0, 0] = v**2 * ((1 - kap * y1) ** 2 + tau**2 * (y1**2 + y2**2))
        g[..., 0, 1] = g[..., 1, 0] = tau * v * y2
        g[..., 0, 2] = g[..., 2, 0] = -tau * v * y1
        g[..., 1, 1] = g[..., 2, 2] = 1.0
    elif isinstance(b, ParamSurface):
        ff = fundamental_forms(b, X[..., 0], X[..., 1])
        yy = Y[..., 0][..., None, None]
        # III is rebuilt from the identity III = -K I + 2H II
        III = -ff.K[..., None, None] * ff.I + 2 * ff.H[..., None, None] * ff.II
        g[..., :2, :2] = ff.I - 2 * yy * ff.II + yy**2 * III
        g[..., 2, 2] = 1.0
    else:
        raise UnsupportedBase(f"no closed-form metric for {type(b).__name__}")
    return metric_sample(g, check=check)


def volume_distortion(chart: FermiChart, x, y, check=True):
    """lambda = sqrt(det Phi*g / det h)."""
    ms = pullback_metric_direct(chart, x, y, check=check)
    mu = base_density_mu(chart, x)
    X, Y = chart.coords(x, y)
    lam = ms.sqrt_det / np.broadcast_to(mu, ms.det.shape)
    return lam


# ----------------------------------------------------------------------------
# Sampling, K1 and eps1
# ----------------------------------------------------------------------------


def sample_tube(chart: FermiChart, nx=32, ny=16, radius=None, offset=0.0):
    """Samples (X, Y) of V x B(0, radius) with shapes (N, m), (N, k).

    Curves use nx base samples; surfaces use an nx x nx base grid.  The
    normal ball gets ny radii in (0, radius) (shifted by ``offset`` in units
    of the radial spacing, so hold-out grids interleave with the default) and
    for k = 2 also ny angles.  y = 0 is always included once per base point.
    """
    radius = chart.eps if radius is None else radius
    axes = []
    for (lo, hi), per in zip(chart.intervals, chart.periodic):
        if per:
            axes.append(lo + (hi - lo) * (np.arange(nx) + offset) / nx)
        else:
            axes.append(np.linspace(lo, hi, nx))
    base = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, chart.m)
    # radii strictly inside the open ball
    rad = radius * (np.arange(1, ny + 1) - 0.5 + 0.5 * offset) / (ny + 0.5)
    if chart.k == 1:
        ys = np.concatenate([[0.0], rad, -rad])[:, None]
    else:
        ang = 2 * np.pi * (np.arange(ny) + offset) / ny
        rr, aa = np.meshgrid(rad, ang, indexing="ij")
        ys = np.concatenate([[[0.0, 0.0]], np.stack([rr * np.cos(aa), rr * np.sin(aa)], -1).reshape(-1, 2)])
    X = np.repeat(base, len(ys), axis=0)
    Y = np.tile(ys, (len(base), 1))
    return X, Y


def estimate_K1(chart: FermiChart, X, Y, safety=K1_SAFETY):
    """1.05 * max |lambda - 1| / |y| over samples with y != 0."""
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    if chart.k == 1 and Y.ndim == 1:
        Y = Y[:, None]
    if chart.m == 1 and X.ndim == 1:
        X = X[:, None]
    ny = _norm(Y)
    keep = ny > 0
    if not np.any(keep):
        raise EmptySample("K1 needs at least one sample with y != 0")
    lam = volume_distortion(chart, X[keep], Y[keep])
    return safety * float(np.max(np.abs(lam - 1.0) / ny[keep]))


def epsilon1(K1):
    """min{1, 1/(2 K1)}."""
    if K1 < 0:
        raise ValueError("K1 must be non-negative")
    return 1.0 if K1 == 0 else min(1.0, 1.0 / (2.0 * K1))


# ----------------------------------------------------------------------------
# Two-chart partition of unity on a circle
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class CirclePartition:
    """Quadratic-bump partition of unity on a periodic interval."""

    period: float
    centers: tuple
    half_width: float
    breakpoints: tuple = field(default=())

    def _bump(self, x, c):
        d = np.abs((np.asarray(x, float) - c + 0.5 * self.period) % self.period - 0.5 * self.period)
        return np.clip(1 - (d / self.half_width) ** 2, 0.0, None)

    def weights(self, x):
        raw = np.stack([self._bump(x, c) for c in self.centers])
        return raw / raw.sum(axis=0)


def two_chart_partition(period=2 * math.pi, half_width=None):
    half_width = 0.375 * period if half_width is None else half_width
    centers = (0.0, 0.5 * period)
    kinks = sorted({(c + s * half_width) % period for c in centers for s in (-1, 1)})
    return CirclePartition(period, centers, half_width, tuple(kinks))


def metric_grid_table(chart: FermiChart, X, Y):
    """Rows (x..., y..., g entries (upper triangle), lambda) for CSV export."""
    ms = pullback_metric_direct(chart, X, Y)
    lam = volume_distortion(chart, X, Y)
    n = chart.n
    iu = np.triu_indices(n)
    header = [f"x{a + 1}" for a in range(chart.m)] + [f"y{i + 1}" for i in range(chart.k)]
    header += [f"g{a}{b}" for a, b in zip(*iu)] + ["lambda"]
    Xa, Ya = chart.coords(X, Y)
    rows = np.concatenate([Xa, Ya, ms.g[..., iu[0], iu[1]], lam[..., None]], axis=-1)
    return header, rows
