"""Admissibility checks and analytic constants.

Weights and reactions, the fibre integral C_a, the weighted Sobolev exponent
and a trial-family estimate of its constant, Lipschitz probing, geodesic
ball volumes with a power-law growth fit, and the dyadic iteration verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Optional

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import (
    BadExponent,
    ExponentOutOfRange,
    MeshTooCoarse,
    NonIntegrable,
)
from .geometry import ParamSurface

OVERFLOW_CAP = 1e12
SUP_SAFETY = 1.05
SOBOLEV_MARGIN = 0.5
G_TOL = 1e-8


def unit_ball_volume(k):
    return math.pi ** (k / 2) / math.gamma(k / 2 + 1)


# ----------------------------------------------------------------------------
# Weights and reactions
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Weight:
    """Weight a(x, y) = min(offset + coef * |y|^power, cap) on Fermi coordinates.

    ``func`` overrides the power form; it receives base params X (..., m) and
    normal coordinates Y (..., k).
    """

    offset: float = 1.0
    coef: float = 0.0
    power: float = 1.0
    cap: float = math.inf
    func: Optional[Callable] = None

    def __call__(self, X, Y):
        Y = np.asarray(Y, float)
        if self.func is not None:
            return np.asarray(self.func(np.asarray(X, float), Y), float)
        r = np.sqrt(np.sum(Y * Y, axis=-1))
        with np.errstate(divide="ignore"):
            val = self.offset + self.coef * r**self.power
        return np.minimum(val, self.cap)

    def radial(self, r):
        """Weight as a function of |y| (power form only)."""
        with np.errstate(divide="ignore"):
            return np.minimum(self.offset + self.coef * np.asarray(r, float) ** self.power, self.cap)

    def sup_norm(self, eps):
        """sup of the weight over the ball of radius eps (power form only)."""
        if self.func is not None:
            raise ValueError("sup_norm needs the power form; sample a custom weight instead")
        ends = self.radial(np.array([0.0, eps])) if self.power > 0 else self.radial(np.array([eps]))
        return float(np.max(np.abs(ends)))

    def to_dict(self):
        return {"offset": self.offset, "coef": self.coef, "power": self.power,
                "cap": None if math.isinf(self.cap) else self.cap}

    @classmethod
    def from_dict(cls, d):
        cap = d.get("cap")
        return cls(float(d.get("offset", 1.0)), float(d.get("coef", 0.0)), float(d.get("power", 1.0)),
                   math.inf if cap is None else float(cap))


@dataclass(frozen=True)
class Reaction:
    """f(z, u) = scale * u + const, or a custom callable ``func(X, Y, u)``."""

    scale: float = 0.0
    const: float = 0.0
    func: Optional[Callable] = None

    def __call__(self, X, Y, u):
        if self.func is not None:
            return np.asarray(self.func(X, Y, u), float)
        return self.scale * np.asarray(u, float) + self.const

    def to_dict(self):
        return {"scale": self.scale, "const": self.const}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d.get("scale", 0.0)), float(d.get("const", 0.0)))


# ----------------------------------------------------------------------------
# Fibre integrals
# ----------------------------------------------------------------------------

_GL16 = np.polynomial.legendre.leggauss(16)


def _graded_radial_rule(eps, levels):
    """Gauss rule on (0, eps) with panels [eps 2^-(j+1), eps 2^-j]; nodes never hit 0.

    Returns nodes and weights of shape (levels, 16) so callers can see each
    panel's contribution.
    """
    hi = eps * 2.0 ** -np.arange(levels)
    lo = 0.5 * hi
    x, w = _GL16
    half = 0.5 * (hi - lo)[:, None]
    nodes = (0.5 * (hi + lo))[:, None] + half * x
    return nodes, half * w


@dataclass(frozen=True)
class FibreIntegral:
    value: float
    converged: bool
    tail_ratio: float


def fibre_integral(g, k, eps, levels=60, n_angle=64):
    """Integral of g(Y) over the ball |y| < eps in R^k (k = 1 or 2).

    The radial direction uses geometrically graded panels towards y = 0 and
    a geometric tail extrapolation; divergence shows up as panel
    contributions that stop decaying.
    """
    r, wr = _graded_radial_rule(eps, levels)
    if k == 1:
        vals = g(r[..., None]) + g(-r[..., None])
        panel = np.sum(wr * vals, axis=-1)
    elif k == 2:
        th = 2 * np.pi * (np.arange(n_angle) + 0.5) / n_angle
        Y = np.stack(np.broadcast_arrays(r[..., None] * np.cos(th), r[..., None] * np.sin(th)), -1)
        vals = g(Y).mean(axis=-1) * 2 * np.pi * r
        panel = np.sum(wr * vals, axis=-1)
    else:
        raise ValueError("fibre dimension must be 1 or 2")
    a, b = abs(panel[-2]), abs(panel[-1])
    ratio = b / a if a > 0 else 0.0
    total = float(np.sum(panel))
    if not np.all(np.isfinite(panel)):
        return FibreIntegral(math.inf, False, math.inf)
    if ratio >= 1 - 1e-3:
        return FibreIntegral(total, False, ratio)
    total += float(panel[-1]) * ratio / (1 - ratio)
    return FibreIntegral(total, True, ratio)


def weight_admissibility(weight: Weight, t, k, eps, X=None, overflow_cap=OVERFLOW_CAP):
    """C_a = sup over base samples X of the fibre integral of a^(-t).

    ``X`` is an array of base parameters (..., m); the default evaluates a
    single fibre, which is exact for weights that only depend on y.
    """
    if not t > k:
        raise BadExponent(f"A1 needs t > k, got t = {t}, k = {k}")
    X = np.zeros((1, 1)) if X is None else np.atleast_2d(np.asarray(X, float))
    best = 0.0
    for x in X:
        def g(Y):
            with np.errstate(divide="ignore", over="ignore"):
                return weight(np.broadcast_to(x, Y.shape[:-1] + x.shape), Y) ** (-float(t))

        fi = fibre_integral(g, k, eps)
        if not fi.converged or not fi.value <= overflow_cap:
            raise NonIntegrable(f"fibre integral of a^-t diverges (value {fi.value:.3g}, tail ratio {fi.tail_ratio:.3g})")
        best = max(best, fi.value)
    return best


# ----------------------------------------------------------------------------
# Sobolev exponent and constant
# ----------------------------------------------------------------------------


def sobolev_exponent(t, k):
    """2*(t) with 1/2*(t) = 1/2 - 1/k + 1/(2t)."""
    if not (t > k / 2 and 1 + 1 / t > 2 / k):
        raise ExponentOutOfRange(f"need t > k/2 and 1 + 1/t > 2/k (t = {t}, k = {k})")
    return 1.0 / (0.5 - 1.0 / k + 0.5 / t)


@dataclass(frozen=True)
class Trial:
    """Test function on the unit ball returning (w, |grad w|^2)."""

    name: str
    func: Callable


def _radial_trial(name, f, df):
    def fn(Y):
        r = np.sqrt(np.sum(Y * Y, axis=-1))
        return f(r), df(r) ** 2

    return Trial(name, fn)


def default_trials(k):
    trials = []
    for m in (1, 2, 3, 4, 6):
        trials.append(_radial_trial(f"poly{m}", lambda r, m=m: np.clip(1 - r * r, 0, None) ** m,
                                    lambda r, m=m: -2 * m * r * np.clip(1 - r * r, 0, None) ** (m - 1)))
    for s in (0.2, 0.35, 0.5, 0.7):
        trials.append(_radial_trial(
            f"gauss{s}",
            lambda r, s=s: np.exp(-r * r / s**2) * (1 - r * r),
            lambda r, s=s: np.exp(-r * r / s**2) * (-2 * r / s**2 * (1 - r * r) - 2 * r)))
    trials.append(_radial_trial("cone", lambda r: np.clip(1 - r, 0, None), lambda r: -np.ones_like(r)))

    for c, rad in ((0.5, 0.45), (0.3, 0.6)):
        def bump(Y, c=c, rad=rad):
            d = Y.copy()
            d[..., 0] -= c
            s = np.sum(d * d, axis=-1) / rad**2
            w = np.clip(1 - s, 0, None) ** 2
            g2 = (4 * np.clip(1 - s, 0, None) / rad**2) ** 2 * np.sum(d * d, axis=-1)
            return w, g2

        trials.append(Trial(f"bump{c}", bump))

    if k == 2:
        for j in (1, 2):
            def ang(Y, j=j):
                r = np.sqrt(np.sum(Y * Y, axis=-1))
                th = np.arctan2(Y[..., 1], Y[..., 0])
                w = r**j * (1 - r * r) * np.cos(j * th)
                wr = (j * r ** (j - 1) * (1 - r * r) - 2 * r ** (j + 1)) * np.cos(j * th)
                wt = -j * r ** (j - 1) * (1 - r * r) * np.sin(j * th)
                return w, wr**2 + wt**2

            trials.append(Trial(f"mode{j}", ang))
    else:
        trials.append(Trial("odd", lambda Y: (Y[..., 0] * (1 - Y[..., 0] ** 2),
                                              (1 - 3 * Y[..., 0] ** 2) ** 2)))
    return trials


@dataclass(frozen=True)
class SobolevEstimate:
    C_S: float
    exponent: float
    quotients: dict
    closed_form_factor: Optional[float] = None


def sobolev_quotient(trial: Trial, weight_radial, t, k, eps):
    """||w||^2_{L^2*} / int |grad w|^2 a over the ball of radius eps."""
    p = sobolev_exponent(t, k)

    def num(Y):
        return np.abs(trial.func(Y / eps)[0]) ** p

    def den(Y):
        r = np.sqrt(np.sum(Y * Y, axis=-1))
        return trial.func(Y / eps)[1] / eps**2 * weight_radial(r)

    top = fibre_integral(num, k, eps, levels=40, n_angle=128).value ** (2 / p)
    bottom = fibre_integral(den, k, eps, levels=40, n_angle=128).value
    return top / bottom


def sobolev_constant_estimate(weight: Weight, t, k, eps, trials=None, C_a=None):
    """(1 + 0.5) x the largest Sobolev quotient over the trial family."""
    trials = default_trials(k) if trials is None else trials
    q = {tr.name: sobolev_quotient(tr, weight.radial, t, k, eps) for tr in trials}
    return SobolevEstimate(
        (1 + SOBOLEV_MARGIN) * max(q.values()),
        sobolev_exponent(t, k),
        q,
        None if C_a is None else C_a ** (-t),
    )


# ----------------------------------------------------------------------------
# Lipschitz probe
# ----------------------------------------------------------------------------


def lipschitz_probe(reaction, m, X, Y, n_u=65, safety=SUP_SAFETY):
    """1.05 x max |f(z,u) - f(z,v)| / |u - v| over z samples and u, v in [-m, m]."""
    if not m > 0:
        raise ValueError("m must be positive")
    u = np.linspace(-m, m, n_u)
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    best = 0.0
    for x, y in zip(*np.broadcast_arrays(X[:, None, :], Y[:, None, :])):
        fu = reaction(x, y, u)
        diff = np.abs(fu[:, None] - fu[None, :])
        du = np.abs(u[:, None] - u[None, :])
        off = du > 0
        best = max(best, float(np.max(diff[off] / du[off])))
    return safety * best


# ----------------------------------------------------------------------------
# Geodesic balls and volume growth
# ----------------------------------------------------------------------------


def curve_distance_field(curve, x, p, periodic=False):
    """Graph distance from the node nearest ``p`` to every node of the chain ``x``.

    Edge lengths are Gauss integrals of the speed, so for a chain the
    distances are exact arc lengths.  Returns (distances, edge lengths).
    """
    x = np.asarray(x, float)
    n = len(x)
    nodes, weights = np.polynomial.legendre.leggauss(8)
    left = x if periodic else x[:-1]
    right = np.roll(x, -1) if periodic else x[1:]
    if periodic:
        right = right.copy()
        right[-1] += n * (x[1] - x[0])
    half = 0.5 * (right - left)
    pts = (0.5 * (right + left))[:, None] + half[:, None] * nodes
    lengths = half * np.sum(weights * curve.speed(pts), axis=-1)
    i = np.arange(len(lengths))
    j = (i + 1) % n
    graph = coo_matrix((lengths, (i, j)), shape=(n, n)).tocsr()
    src = int(np.argmin(np.abs(x - float(p))))
    return dijkstra(graph, directed=False, indices=src), lengths


def _primitive_offsets(K):
    out = []
    for i, j in product(range(-K, K + 1), repeat=2):
        if (i, j) != (0, 0) and math.gcd(i, j) == 1 and (i > 0 or (i == 0 and j > 0)):
            out.append((i, j))
    return out


def surface_distance_field(surface, axes, p, periodic=(False, False), K=8):
    """Graph distance on a parameter grid with a primitive-offset stencil.

    Each node links to the nodes at integer offsets (i, j) with |i|, |j| <= K
    and gcd(i, j) = 1; edge lengths use the first fundamental form at the
    edge midpoint.  Returns distances of shape (n1, n2).
    """
    n1, n2 = len(axes[0]), len(axes[1])
    h1, h2 = axes[0][1] - axes[0][0], axes[1][1] - axes[1][0]
    I1, I2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    rows, cols, lens = [], [], []
    for di, dj in _primitive_offsets(K):
        J1, J2 = I1 + di, I2 + dj
        ok = np.ones_like(I1, dtype=bool)
        if periodic[0]:
            J1 = J1 % n1
        else:
            ok &= (J1 >= 0) & (J1 < n1)
        if periodic[1]:
            J2 = J2 % n2
        else:
            ok &= (J2 >= 0) & (J2 < n2)
        s1 = axes[0][I1[ok]] + 0.5 * di * h1
        s2 = axes[1][I2[ok]] + 0.5 * dj * h2
        p1, p2 = surface.partials(s1, s2)
        v = di * h1 * p1 + dj * h2 * p2
        rows.append(I1[ok] * n2 + I2[ok])
        cols.append(J1[ok] * n2 + J2[ok])
        lens.append(np.linalg.norm(v, axis=-1))
    N = n1 * n2
    graph = coo_matrix((np.concatenate(lens), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)).tocsr()
    s1 = int(np.argmin(np.abs(axes[0] - p[0])))
    s2 = int(np.argmin(np.abs(axes[1] - p[1])))
    return dijkstra(graph, directed=False, indices=s1 * n2 + s2).reshape(n1, n2)


def _axis(lo, hi, h, periodic):
    n = max(2, int(math.ceil((hi - lo) / h)) + (0 if periodic else 1))
    return lo + (hi - lo) * np.arange(n) / (n if periodic else n - 1)


def _curve_ball_volume(curve, p, R, h, window, periodic):
    x = _axis(window[0], window[1], h, periodic)
    d, lengths = curve_distance_field(curve, x, p, periodic)
    i = np.arange(len(lengths))
    j = (i + 1) % len(x)
    # along an edge d(s) = min(d_i + s, d_j + l - s), so {d < R} has this exact length
    inside = np.minimum(lengths, np.maximum(R - d[i], 0) + np.maximum(R - d[j], 0))
    return float(np.sum(inside))


def _surface_ball_volume(surface, p, R, h, window, periodic, K=8):
    axes = [_axis(lo, hi, h, per) for (lo, hi), per in zip(window, periodic)]
    h1, h2 = axes[0][1] - axes[0][0], axes[1][1] - axes[1][0]
    d = surface_distance_field(surface, axes, p, periodic, K)
    X1, X2 = np.meshgrid(*axes, indexing="ij")
    p1, p2 = surface.partials(X1, X2)
    area = np.linalg.norm(np.cross(p1, p2), axis=-1) * h1 * h2
    # trapezoid weights on non-periodic edges
    if not periodic[0]:
        area[[0, -1], :] *= 0.5
    if not periodic[1]:
        area[:, [0, -1]] *= 0.5
    # smoothed indicator over one local cell width
    cell = np.sqrt(np.linalg.norm(np.cross(p1, p2), axis=-1) * h1 * h2)
    with np.errstate(divide="ignore", invalid="ignore"):
        ind = np.where(cell > 0, np.clip((R - d) / cell + 0.5, 0.0, 1.0), (d < R).astype(float))
    return float(np.sum(ind * area))


def geodesic_ball_volume(manifold, p, R, h=None, window=None):
    """Volume of {q : d_M(p, q) < R} from graph shortest paths.

    Curves are sampled as chains with exact (Gauss) edge lengths; surfaces as
    grids with a wide primitive-offset stencil and midpoint-metric edge lengths.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    surf = isinstance(manifold, ParamSurface)
    h = R / 20 if h is None else h
    if h > R / 10:
        raise MeshTooCoarse(f"mesh spacing {h:g} exceeds R/10 = {R / 10:g}")
    if surf:
        p = np.asarray(p, float)
        win, per = [], []
        for a in range(2):
            lo, hi = manifold.domain[a]
            if window is not None:
                win.append(tuple(window[a]))
                per.append(bool(manifold.periodic[a]) and math.isclose(window[a][1] - window[a][0], hi - lo))
            elif math.isfinite(lo) and math.isfinite(hi):
                win.append((lo, hi))
                per.append(bool(manifold.periodic[a]))
            else:
                win.append((p[a] - 1.25 * R, p[a] + 1.25 * R))
                per.append(False)
        return _surface_ball_volume(manifold, p, R, h, win, per)
    lo, hi = manifold.domain
    if window is not None:
        win, per = tuple(window), bool(manifold.periodic) and math.isclose(window[1] - window[0], hi - lo)
    elif math.isfinite(lo) and math.isfinite(hi):
        win, per = (lo, hi), bool(manifold.periodic)
    else:
        win, per = (float(p) - 1.25 * R, float(p) + 1.25 * R), False
    return _curve_ball_volume(manifold, float(p), R, h, win, per)


@dataclass(frozen=True)
class GrowthFit:
    C1: float
    gamma: float
    R0: float
    residual: float
    radii: tuple = ()
    volumes: tuple = ()

    def to_dict(self):
        return {"C1": self.C1, "gamma": self.gamma, "R0": self.R0, "residual": self.residual,
                "radii": list(self.radii), "volumes": list(self.volumes)}


def fit_growth(radii, volumes, R0=None, gamma_floor=1e-3):
    """Log-log least squares, then C1 raised so vol <= C1 R^gamma at every radius."""
    r = np.asarray(radii, float)
    v = np.asarray(volumes, float)
    if np.any(np.diff(r) <= 0):
        raise ValueError("radii must be increasing")
    A = np.stack([np.ones_like(r), np.log(r)], -1)
    coef, *_ = np.linalg.lstsq(A, np.log(v), rcond=None)
    gamma = max(float(coef[1]), gamma_floor)
    resid = float(np.sqrt(np.mean((np.log(v) - coef[0] - coef[1] * np.log(r)) ** 2)))
    C1 = float(np.max(v / r**gamma))
    return GrowthFit(C1, gamma, float(r[0] if R0 is None else R0), resid, tuple(r.tolist()), tuple(v.tolist()))


def volume_growth_fit(manifold, p, radii, R0=None, h=None, window=None):
    radii = [float(R) for R in radii]
    if R0 is not None and min(radii) <= R0:
        raise ValueError("all radii must exceed R0")
    vols = [geodesic_ball_volume(manifold, p, R, h=None if h is None else min(h, R / 10), window=window)
            for R in radii]
    return fit_growth(radii, vols, R0)


# ----------------------------------------------------------------------------
# Iteration lemma
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class IterationVerdict:
    status: str  # "ForcedZero" or "HypothesisViolated"
    failures: list = field(default_factory=list)
    iterations: int = 0
    bound: float = math.nan

    @property
    def forced_zero(self):
        return self.status == "ForcedZero"

    def to_dict(self):
        return {"status": self.status, "failures": list(self.failures), "iterations": self.iterations,
                "bound": self.bound}


def iteration_lemma_verdict(radii, L, theta, gamma, C, g=None, g_tol=G_TOL):
    """Check the hypotheses of the dyadic iteration lemma on a sampled ladder.

    ``radii`` must be a dyadic ladder R0 * 2^j.  On success the bound
    C (2^gamma theta)^m R_min^gamma with m = len(radii) - 1 is reported.
    """
    R = np.asarray(radii, float)
    L = np.asarray(L, float)
    g = np.zeros_like(L) if g is None else np.asarray(g, float)
    fails = []
    if not (theta >= 0 and gamma > 0):
        fails.append("theta must be >= 0 and gamma > 0")
    elif not theta < 2.0 ** (-gamma):
        fails.append(f"strictness: theta = {theta:.6g} is not < 2^-gamma = {2.0 ** (-gamma):.6g}")
    if len(R) > 1 and not np.allclose(R[1:] / R[:-1], 2.0, rtol=1e-12, atol=0):
        fails.append("ladder is not dyadic")
    if np.any(L < 0):
        fails.append("L is negative at some rung")
    if np.any(np.diff(L) < 0):
        fails.append("L is not non-decreasing")
    for j in range(len(R) - 1):
        if not L[j] <= theta * L[j + 1] + g[j]:
            fails.append(f"contraction fails at R = {R[j]:.6g}: {L[j]:.6g} > {theta:.6g} * {L[j + 1]:.6g} + {g[j]:.6g}")
    over = L > C * R**gamma
    if np.any(over):
        fails.append(f"growth bound L <= C R^gamma fails at R = {R[over][0]:.6g}")
    if len(g) and not abs(g[-1]) < g_tol:
        fails.append(f"g does not decay: last value {g[-1]:.3g}")
    m = len(R) - 1
    bound = float(C * (2.0**gamma * theta) ** m * R[0] ** gamma) if len(R) else math.nan
    return IterationVerdict("HypothesisViolated" if fails else "ForcedZero", fails, m, bound)
