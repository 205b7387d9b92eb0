"""Finite differences on tube grids in Fermi coordinates.

The operator -(1/sqrt g) d_i(sqrt g a g^ij d_j u) is discretised through its
energy: on every grid cell the coefficient tensor C = a sqrt(g) g^-1 is
evaluated at the cell centre and split onto the cell's edges (axis edges for
the diagonal of C, one face diagonal per coordinate pair for the
off-diagonal part).  The stiffness matrix K = sum_e w_e (e_i - e_j)(e_i - e_j)^T
is symmetric, conservative, and an M-matrix whenever every edge weight is
non-negative.  The discrete equation at node n is

    (K u)_n + vol_n sqrt(g_n) (Lambda |grad u|^q - f(u))_n = 0.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Optional, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .analysis import Reaction, Weight
from .errors import DegenerateMetric, InvalidTestFunction, NoConvergence
from .fermi import DET_MIN, FermiChart, pullback_metric_direct

OMEGA = 0.7
SOLVER_TOL = 1e-10
MAX_ITER = 500
CG_RTOL = 1e-12


@dataclass(frozen=True)
class TubeGrid:
    """Tensor grid over (base parameters, normal coordinates).

    Base directions with periodic identification use ``nx`` nodes with the
    right end dropped; other base directions use ``nx`` nodes including both
    ends.  Normal directions use ``ny`` nodes on [-e, e] with e = eps for
    k = 1 and e = eps / sqrt(2) for k = 2 (a square inscribed in the normal
    disk).  Odd ``ny`` keeps every cell centre off y = 0.
    """

    chart: FermiChart
    axes: tuple
    periodic: tuple
    spacing: tuple
    boundary: np.ndarray
    vol: np.ndarray
    sqrt_g: np.ndarray
    ginv: np.ndarray
    X: np.ndarray
    Y: np.ndarray

    @property
    def shape(self):
        return tuple(len(a) for a in self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def dim(self):
        return len(self.axes)

    @property
    def interior(self):
        return ~self.boundary

    @property
    def nx(self):
        return len(self.axes[0])

    @property
    def ny(self):
        return len(self.axes[-1])

    def dvol(self):
        """Quadrature weights vol_n sqrt(g_n) (trapezoid with metric density)."""
        return self.vol * self.sqrt_g

    def integrate(self, values):
        return float(np.sum(self.dvol() * np.asarray(values, float).ravel()))

    def domain_volume(self):
        return float(np.sum(self.dvol()))

    def to_dict(self):
        return {
            "chart": self.chart.to_dict(),
            "shape": list(self.shape),
            "spacing": [float(h) for h in self.spacing],
            "periodic": [bool(p) for p in self.periodic],
        }


def make_grid(chart: FermiChart, nx, ny):
    axes, periodic, spacing = [], [], []
    for (lo, hi), per in zip(chart.intervals, chart.periodic):
        if per:
            axes.append(lo + (hi - lo) * np.arange(nx) / nx)
            spacing.append((hi - lo) / nx)
        else:
            axes.append(np.linspace(lo, hi, nx))
            spacing.append((hi - lo) / (nx - 1))
        periodic.append(bool(per))
    half = chart.eps if chart.k == 1 else chart.eps / math.sqrt(2)
    for _ in range(chart.k):
        axes.append(np.linspace(-half, half, ny))
        spacing.append(2 * half / (ny - 1))
        periodic.append(False)

    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.stack([c.ravel() for c in mesh], axis=-1)
    X, Y = coords[:, : chart.m], coords[:, chart.m:]

    boundary = np.zeros([len(a) for a in axes], dtype=bool)
    vol = np.ones([len(a) for a in axes])
    for a, per in enumerate(periodic):
        idx = [slice(None)] * len(axes)
        vol *= spacing[a]
        if not per:
            for end in (0, -1):
                idx[a] = end
                boundary[tuple(idx)] = True
                vol[tuple(idx)] *= 0.5
    ms = pullback_metric_direct(chart, X, Y, check=False)
    bnd = boundary.ravel()
    if np.any(~(ms.det[~bnd] > DET_MIN)):
        raise DegenerateMetric("pullback metric degenerates at an interior grid node")
    return TubeGrid(chart, tuple(axes), tuple(periodic), tuple(spacing), bnd, vol.ravel(),
                    np.sqrt(np.maximum(ms.det, 0.0)), ms.inv, X, Y)


@dataclass
class GridField:
    values: np.ndarray
    kind: str = "solution"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, float).ravel()
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid field has non-finite values")


# ----------------------------------------------------------------------------
# Assembly
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Operator:
    K: sp.csr_matrix
    m_matrix: bool
    min_edge_weight: float


def _cell_corners(grid):
    """Lower-corner multi-indices of all cells and the corresponding centres."""
    counts = [len(a) if per else len(a) - 1 for a, per in zip(grid.axes, grid.periodic)]
    idx = np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")
    idx = [i.ravel() for i in idx]
    centre = np.stack([ax[i] + 0.5 * h for ax, i, h in zip(grid.axes, idx, grid.spacing)], axis=-1)
    return idx, centre


def _node(grid, idx, offset):
    shifted = []
    for a, (i, o) in enumerate(zip(idx, offset)):
        j = i + o
        if grid.periodic[a]:
            j = j % len(grid.axes[a])
        shifted.append(j)
    return np.ravel_multi_index(shifted, grid.shape)


def assemble_divergence_operator(grid: TubeGrid, weight: Weight) -> Operator:
    """Stiffness matrix K with u^T K u ~ int a |grad u|^2 dvol_g."""
    chart = grid.chart
    d = grid.dim
    idx, centre = _cell_corners(grid)
    ms = pullback_metric_direct(chart, centre[:, : chart.m], centre[:, chart.m:], check=False)
    if np.any(~(ms.det > DET_MIN)):
        raise DegenerateMetric("pullback metric degenerates at a cell centre")
    V = float(np.prod(grid.spacing))
    a = weight(centre[:, : chart.m], centre[:, chart.m:])
    C = (V * a * np.sqrt(ms.det))[:, None, None] * ms.inv
    h = grid.spacing

    rows, cols, wts = [], [], []

    def add(o1, o2, w):
        rows.append(_node(grid, idx, o1))
        cols.append(_node(grid, idx, o2))
        wts.append(w)

    def unit(*axes_):
        o = [0] * d
        for ax in axes_:
            o[ax] += 1
        return o

    nside = 2 ** (d - 1)
    for ax in range(d):
        others = [b for b in range(d) if b != ax]
        for pattern in product((0, 1), repeat=d - 1):
            o = [0] * d
            for b, p in zip(others, pattern):
                o[b] = p
            o2 = list(o)
            o2[ax] += 1
            add(o, o2, C[:, ax, ax] / (h[ax] ** 2 * nside))

    if d >= 2:
        nface = 2 ** (d - 2)
        for ax, bx in product(range(d), repeat=2):
            if bx <= ax:
                continue
            c = C[:, ax, bx]
            pos = c > 0
            w = np.abs(c) / (h[ax] * h[bx] * nface)
            others = [b for b in range(d) if b not in (ax, bx)]
            for pattern in product((0, 1), repeat=d - 2):
                base = [0] * d
                for b, p in zip(others, pattern):
                    base[b] = p
                o00 = base
                o10 = [v + (1 if i == ax else 0) for i, v in enumerate(base)]
                o01 = [v + (1 if i == bx else 0) for i, v in enumerate(base)]
                o11 = [v + (1 if i in (ax, bx) else 0) for i, v in enumerate(base)]
                n00, n10, n01, n11 = (_node(grid, idx, o) for o in (o00, o10, o01, o11))
                rows.append(np.where(pos, n00, n10))
                cols.append(np.where(pos, n11, n01))
                wts.append(w)
                for p1, p2 in ((n00, n10), (n01, n11), (n00, n01), (n10, n11)):
                    rows.append(p1)
                    cols.append(p2)
                    wts.append(-0.5 * w)

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    w = np.concatenate(wts)
    N = grid.size
    # merge parallel contributions to obtain the net weight per edge
    lo, hi = np.minimum(r, c), np.maximum(r, c)
    E = sp.coo_matrix((w, (lo, hi)), shape=(N, N)).tocsr()
    E.sum_duplicates()
    E = E.tocoo()
    net_min = float(E.data.min()) if E.nnz else 0.0
    off = sp.coo_matrix((-E.data, (E.row, E.col)), shape=(N, N))
    off = off + off.T
    diag = -np.asarray(off.sum(axis=1)).ravel()
    K = (off + sp.diags(diag)).tocsr()
    return Operator(K, net_min >= -1e-14 * max(1.0, float(np.abs(E.data).max(initial=0))), net_min)


def apply_divergence(grid: TubeGrid, op: Operator, u):
    """Nodal values of -div(a grad u) = K u / (vol sqrt g)."""
    return (op.K @ np.asarray(u, float).ravel()) / grid.dvol()


# ----------------------------------------------------------------------------
# Gradients
# ----------------------------------------------------------------------------


def coordinate_gradient(grid: TubeGrid, values):
    """Partial derivatives d_a u at nodes, shape (N, d).

    Central differences inside, second-order one-sided on non-periodic ends.
    """
    u = np.asarray(values, float).reshape(grid.shape)
    parts = []
    for a, (h, per) in enumerate(zip(grid.spacing, grid.periodic)):
        if per:
            du = (np.roll(u, -1, axis=a) - np.roll(u, 1, axis=a)) / (2 * h)
        else:
            du = np.gradient(u, h, axis=a, edge_order=2)
        parts.append(du.ravel())
    return np.stack(parts, axis=-1)


def gradient_norm(grid: TubeGrid, values):
    """|grad u|_g = sqrt(g^ij d_i u d_j u) at every node."""
    du = coordinate_gradient(grid, values)
    sq = np.einsum("ni,nij,nj->n", du, grid.ginv, du)
    return GridField(np.sqrt(np.maximum(sq, 0.0)), kind="residual")


# ----------------------------------------------------------------------------
# Problems and solver
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class EllipticProblem:
    """-div(a grad u) + Lambda |grad u|^q = f(z, u) with Dirichlet data."""

    grid: TubeGrid
    weight: Weight
    Lambda: float = 0.0
    q: float = 1.0
    reaction: Reaction = field(default_factory=Reaction)
    dirichlet: Union[float, Callable, np.ndarray] = 0.0

    def __post_init__(self):
        if self.q < 1:
            raise ValueError("q must be >= 1")

    def boundary_values(self):
        g = self.grid
        if callable(self.dirichlet):
            vals = np.asarray(self.dirichlet(g.X, g.Y), float)
            return np.broadcast_to(vals, (g.size,)).copy()
        vals = np.asarray(self.dirichlet, float)
        return np.broadcast_to(vals.ravel() if vals.ndim else vals, (g.size,)).copy()

    def source(self, u, grad=None):
        """Nodal right-hand side f(z, u) - Lambda |grad u|^q."""
        g = self.grid
        out = self.reaction(g.X, g.Y, u)
        if self.Lambda != 0:
            gn = gradient_norm(g, u).values if grad is None else grad
            out = out - self.Lambda * gn**self.q
        return np.broadcast_to(out, (g.size,)).astype(float)


@dataclass
class SolveResult:
    u: GridField
    iterations: int
    history: list
    residual: float
    operator: Operator


class _LinearSolver:
    def __init__(self, A, method):
        self.A = A.tocsc()
        self.method = method
        self._lu = None
        if method == "lu":
            self._lu = spla.splu(self.A)
        else:
            d = self.A.diagonal()
            self._M = sp.diags(1.0 / np.where(d > 0, d, 1.0))

    def __call__(self, b):
        if self._lu is not None:
            return self._lu.solve(b)
        x, info = spla.cg(self.A, b, rtol=CG_RTOL, atol=0.0, M=self._M, maxiter=20 * self.A.shape[0])
        if info != 0:
            # fall back to a direct factorisation rather than return a poor iterate
            self._lu = spla.splu(self.A)
            return self._lu.solve(b)
        return x


def strong_residual(problem: EllipticProblem, op: Operator, u):
    """Nodal residual -div(a grad u) + Lambda |grad u|^q - f(u) (interior nodes meaningful)."""
    return apply_divergence(problem.grid, op, u) - problem.source(u)


def solve(problem: EllipticProblem, omega=OMEGA, tol=SOLVER_TOL, max_iter=MAX_ITER, method="auto",
          u0=None, op=None):
    """Damped Picard iteration in defect form.

    Each step freezes |grad u|^q and f(., u) at the current iterate, solves
    K_II delta = -(vol sqrt g r)_I for the interior correction and sets
    u <- u + omega delta.  Stops when the interior strong residual is <= tol.
    """
    grid = problem.grid
    op = assemble_divergence_operator(grid, problem.weight) if op is None else op
    bnd = grid.boundary
    inn = ~bnd
    gvals = problem.boundary_values()
    u = np.zeros(grid.size) if u0 is None else np.asarray(u0, float).ravel().copy()
    u[bnd] = gvals[bnd]
    A = op.K[inn][:, inn]
    if method == "auto":
        method = "lu" if inn.sum() <= 200_000 else "cg"
    lin = _LinearSolver(A, method)
    dv = grid.dvol()
    history = []
    nonlinear = problem.Lambda != 0 or problem.reaction.func is not None or problem.reaction.scale != 0
    for it in range(max_iter + 1):
        r = strong_residual(problem, op, u)
        res = float(np.max(np.abs(r[inn]))) if inn.any() else 0.0
        history.append(res)
        if res <= tol:
            return SolveResult(GridField(u, "solution", {"iterations": it}), it, history, res, op)
        if it == max_iter or not np.isfinite(res):
            break
        delta = lin(-(dv * r)[inn])
        step = omega if nonlinear else 1.0
        u[inn] += step * delta
    raise NoConvergence(f"Picard iteration stalled at residual {history[-1]:.3g} after {len(history) - 1} iterations",
                        iterations=len(history) - 1, history=history)


# ----------------------------------------------------------------------------
# Weak residual
# ----------------------------------------------------------------------------


def weighted_l1(grid: TubeGrid, psi):
    return float(np.sum(grid.dvol() * np.abs(np.asarray(psi, float).ravel())))


def check_test_function(grid: TubeGrid, psi, tol=0.0):
    psi = np.asarray(psi, float).ravel()
    if np.any(psi < -tol):
        raise InvalidTestFunction(f"test function is negative (min {psi.min():.3g})")
    if np.any(np.abs(psi[grid.boundary]) > tol):
        raise InvalidTestFunction("test function does not vanish on boundary nodes")
    return psi


def weak_residual(u, psi, problem: EllipticProblem, op: Optional[Operator] = None):
    """psi^T K u + sum vol sqrt(g) (Lambda |grad u|^q - f(u)) psi.

    <= 0 means u is a subsolution against psi, >= 0 a supersolution.
    """
    grid = problem.grid
    uvals = u.values if isinstance(u, GridField) else np.asarray(u, float).ravel()
    pvals = check_test_function(grid, psi.values if isinstance(psi, GridField) else psi)
    op = assemble_divergence_operator(grid, problem.weight) if op is None else op
    ku = op.K @ uvals
    return float(np.sum(pvals * ku) - np.sum(grid.dvol() * problem.source(uvals) * pvals))


# ----------------------------------------------------------------------------
# Persistence
# ----------------------------------------------------------------------------


def write_field_csv(path, grid: TubeGrid, values, name="value"):
    values = np.asarray(values, float).ravel()
    idx = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), axis=-1)
    m, k = grid.chart.m, grid.chart.k
    header = [f"i{a}" for a in range(grid.dim)] + [f"x{a + 1}" for a in range(m)] + [f"y{i + 1}" for i in range(k)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header + [name])
        for n in range(grid.size):
            w.writerow(list(idx[n]) + [repr(float(v)) for v in grid.X[n]] + [repr(float(v)) for v in grid.Y[n]]
                       + [repr(float(values[n]))])


def field_sidecar(grid: TubeGrid, result: Optional[SolveResult] = None):
    doc = {"grid": grid.to_dict()}
    if result is not None:
        doc["solver"] = {"iterations": result.iterations, "residual": result.residual,
                         "history": [float(h) for h in result.history],
                         "m_matrix": bool(result.operator.m_matrix)}
    return json.loads(json.dumps(doc))
