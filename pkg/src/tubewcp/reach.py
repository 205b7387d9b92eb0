"""Sample-based estimates of the normal injectivity radius.

The radius at a sample p is the smaller of

* the local fold radius (where the Fermi chart first degenerates), capped at 1,
* half the distance from p to the closest *non-neighbour* sample, i.e. a
  sample on another component or at parameter distance >= 4 * fold(p).

The estimate only ever takes minima over the sample set, so refining by
nesting (adding samples) can never increase it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InsufficientSamples
from .geometry import ParamSurface, PlaneCurve, fundamental_forms, plane_curvature, space_curvature

FOLD_CAP = 1.0
NEIGHBOUR_FACTOR = 4.0
COLLISION_TOL = 1e-9


def local_fold_radius(base, x):
    """Largest radius (capped at 1) on which the normal chart stays nondegenerate.

    Curves fold at distance 1/|kappa| along the principal normal; surfaces at
    1/max|principal curvature|.
    """
    if isinstance(base, ParamSurface):
        x = np.asarray(x, float)
        ff = fundamental_forms(base, x[..., 0], x[..., 1])
        shape = np.linalg.solve(ff.I, ff.II)
        kmax = np.max(np.abs(np.linalg.eigvals(shape).real), axis=-1)
    elif isinstance(base, PlaneCurve):
        kmax = np.abs(plane_curvature(base, x))
    else:
        kmax = space_curvature(base, x)[0]
    with np.errstate(divide="ignore"):
        return np.minimum(FOLD_CAP, np.where(kmax > 0, 1.0 / np.maximum(kmax, 1e-300), np.inf))


@dataclass(frozen=True)
class ManifoldSample:
    """Samples of one or more parametrised components.

    ``params`` has shape (N, m); ``frames`` (N, k, d) holds an orthonormal
    basis of the normal space at each point.
    """

    params: np.ndarray
    points: np.ndarray
    frames: np.ndarray
    component: np.ndarray
    fold: np.ndarray
    periods: tuple
    spacing: float


def _normal_basis(base, params):
    if isinstance(base, ParamSurface):
        return base.unit_normal(params[:, 0], params[:, 1])[:, None, :]
    t = base.tangent(params[:, 0])
    if isinstance(base, PlaneCurve):
        return np.stack([-t[:, 1], t[:, 0]], axis=-1)[:, None, :]
    # any orthonormal complement of the tangent (no curvature needed)
    helper = np.where(np.abs(t[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    e1 = np.cross(t, helper)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    return np.stack([e1, np.cross(t, e1)], axis=-2)


def sample_manifold(components, windows, n):
    """Uniform samples of each component over its window.

    ``components`` is one base or a list; ``windows`` is an interval per
    component (curves) or a pair of intervals (surfaces); ``n`` counts nodes
    per parameter direction.  Doubling resolution as n -> 2n - 1 nests the
    previous samples.
    """
    if not isinstance(components, (list, tuple)):
        components = [components]
    if np.ndim(windows) == (2 if isinstance(components[0], ParamSurface) else 1):
        windows = [windows] * len(components)
    params, points, frames, comp, fold = [], [], [], [], []
    spacing = 0.0
    periods = None
    for c, (base, win) in enumerate(zip(components, windows)):
        surf = isinstance(base, ParamSurface)
        ivs = [tuple(w) for w in win] if surf else [tuple(win)]
        axes = []
        per = []
        for a, (lo, hi) in enumerate(ivs):
            axes.append(np.linspace(lo, hi, n))
            spacing = max(spacing, (hi - lo) / (n - 1))
            is_per = base.periodic[a] if surf else base.periodic
            dom = base.domain[a] if surf else base.domain
            per.append(dom[1] - dom[0] if is_per and math.isclose(hi - lo, dom[1] - dom[0]) else math.inf)
        periods = tuple(per) if periods is None else periods
        P = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(ivs))
        # a full periodic window repeats its first node at the end
        for a, pa in enumerate(per):
            if math.isfinite(pa):
                P = P[P[:, a] < ivs[a][1] - 0.5 * spacing * 1e-6]
        params.append(P)
        points.append(base(*P.T))
        frames.append(_normal_basis(base, P))
        comp.append(np.full(len(P), c))
        fold.append(local_fold_radius(base, P if surf else P[:, 0]))
    return ManifoldSample(
        np.concatenate(params),
        np.concatenate(points),
        np.concatenate(frames),
        np.concatenate(comp),
        np.concatenate(fold),
        periods,
        spacing,
    )


@dataclass(frozen=True)
class ReachEstimate:
    p: np.ndarray
    rho: float
    witnesses: list = field(default_factory=list)
    method: str = "local-fold"


@dataclass(frozen=True)
class ReachResult:
    samples: ManifoldSample
    rho: np.ndarray
    partner: np.ndarray  # -1 when the fold radius is binding
    collision_tol: float = COLLISION_TOL

    @property
    def min_rho(self):
        return float(np.min(self.rho))

    def witness(self, i):
        """Least-squares meeting point of the normal spaces at i and its partner."""
        j = int(self.partner[i])
        if j < 0:
            return None
        s = self.samples
        A = np.concatenate([s.frames[i], -s.frames[j]], axis=0).T
        coef, *_ = np.linalg.lstsq(A, s.points[j] - s.points[i], rcond=None)
        k = s.frames.shape[1]
        v, w = coef[:k], coef[k:]
        a = s.points[i] + v @ s.frames[i]
        b = s.points[j] + w @ s.frames[j]
        gap = float(np.linalg.norm(a - b))
        return {
            "p": s.params[i].tolist(),
            "p_prime": s.params[j].tolist(),
            "v": v.tolist(),
            "v_prime": w.tolist(),
            "point": (0.5 * (a + b)).tolist(),
            "residual": gap,
            "collides": gap <= self.collision_tol,
            "distance": float(np.linalg.norm(s.points[i] - s.points[j])),
        }

    def estimate(self, i):
        w = self.witness(i)
        return ReachEstimate(
            self.samples.params[i],
            float(self.rho[i]),
            [] if w is None else [w],
            "local-fold" if self.partner[i] < 0 else "pairwise-distance",
        )

    def nearest(self, p):
        d = np.linalg.norm(self.samples.params - np.atleast_1d(p), axis=-1)
        return int(np.argmin(d))


def _param_distance(P, Q, periods):
    d = np.abs(P - Q)
    for a, per in enumerate(periods):
        if math.isfinite(per):
            d[..., a] = np.minimum(d[..., a] % per, per - d[..., a] % per)
    return np.linalg.norm(d, axis=-1)


def pairwise_reach(samples: ManifoldSample, resolution=0.25):
    """Per-sample reach estimate over a ``ManifoldSample``."""
    N = len(samples.points)
    if N < 2 or samples.spacing > resolution:
        raise InsufficientSamples(f"sample spacing {samples.spacing:.3g} exceeds resolution {resolution:g}")
    m = samples.params.shape[1]
    fold = samples.fold
    # every neighbour (param distance < 4 fold <= 4) lies in this many ranks
    per_dir = int(math.ceil(2 * NEIGHBOUR_FACTOR * FOLD_CAP / max(samples.spacing, 1e-300))) + 1
    kq = min(N, per_dir**m + 1)
    tree = cKDTree(samples.points)
    dist, idx = tree.query(samples.points, k=kq, distance_upper_bound=2 * FOLD_CAP + 1e-12)
    if kq == 1:
        dist, idx = dist[:, None], idx[:, None]
    valid = idx < N
    idx_safe = np.where(valid, idx, 0)
    other = samples.component[idx_safe] != samples.component[:, None]
    pd = _param_distance(samples.params[:, None, :], samples.params[idx_safe], samples.periods)
    far = other | (pd >= NEIGHBOUR_FACTOR * fold[:, None])
    cand = np.where(valid & far, 0.5 * dist, np.inf)
    best = np.argmin(cand, axis=1)
    half = cand[np.arange(N), best]
    use_pair = half < fold
    rho = np.where(use_pair, half, fold)
    partner = np.where(use_pair, idx_safe[np.arange(N), best], -1)
    return ReachResult(samples, rho, partner)


def tube_exists(samples: ManifoldSample, eps, resolution=0.25):
    """(min rho >= eps, witness list, ReachResult)."""
    res = pairwise_reach(samples, resolution)
    ok = res.min_rho >= eps
    witnesses = []
    if not ok:
        i = int(np.argmin(res.rho))
        w = res.witness(i)
        witnesses.append(w if w is not None else {"p": samples.params[i].tolist(), "fold": float(samples.fold[i])})
    return ok, witnesses, res


def reach_at(curve, x, half_width=3 * math.pi, per_unit=100, resolution=0.25):
    """Reach at parameter ``x`` from a symmetric window of samples around it."""
    n = 2 * int(math.ceil(half_width * per_unit)) + 1
    res = pairwise_reach(sample_manifold(curve, (x - half_width, x + half_width), n), resolution)
    return float(res.rho[n // 2]), res


def parallel_lines(distance):
    """Two parallel lines ``distance`` apart, as a component list."""
    from .geometry import line

    return [line(offset=0.0), line(offset=float(distance))]
