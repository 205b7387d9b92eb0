"""Weak comparison verification on a tube grid.

Cut-offs and test functions built from the base geodesic distance, the
functionals L~_R and L_2R, the constants Theta_A/B/C, Theta_1, Theta_2 and
theta(R), the threshold eps_0, and a report that ties the measured ladder to
the iteration verdict.

Integrals over the tube use the grid quadrature weights vol_n sqrt(g_n).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .analysis import (
    GrowthFit,
    Weight,
    curve_distance_field,
    iteration_lemma_verdict,
    lipschitz_probe,
    sobolev_constant_estimate,
    surface_distance_field,
    unit_ball_volume,
    weight_admissibility,
)
from .errors import MissingConstant, NoAdmissibleEps, NotCertified
from .fermi import epsilon1, estimate_K1, sample_tube
from .geometry import ParamSurface
from .pde import EllipticProblem, GridField, TubeGrid, gradient_norm, weak_residual, assemble_divergence_operator

BETA = 2.0
TAU_PRIME = 0.25
EPS0_MARGIN = 0.1
CERT_TOL_REL = 1e-8
POINTWISE_TOL = 1e-10
RATIO_TOL = 0.02
GRAD_SAFETY = 1.05


# ----------------------------------------------------------------------------
# Distances, cut-offs and test functions
# ----------------------------------------------------------------------------


def base_distance(grid: TubeGrid, p):
    """Geodesic distance on the base from ``p`` to every grid node (constant along fibres)."""
    chart = grid.chart
    base = chart.base
    if isinstance(base, ParamSurface):
        d = surface_distance_field(base, grid.axes[:2], np.atleast_1d(p), grid.periodic[:2])
    else:
        d, _ = curve_distance_field(base, grid.axes[0], float(np.atleast_1d(p)[0]), grid.periodic[0])
    shape = grid.shape
    d = d.reshape(shape[: chart.m] + (1,) * chart.k)
    return np.broadcast_to(d, shape).ravel().copy()


@dataclass(frozen=True)
class CutoffProfile:
    R: float
    values: np.ndarray
    gradient_bound: float


def cutoff_phi(R, distance):
    """1 on d <= R, ((2R - d)/R)^2 on R < d < 2R, 0 beyond."""
    if not R > 0:
        raise ValueError("R must be positive")
    d = np.asarray(distance, float)
    vals = np.where(d <= R, 1.0, np.where(d < 2 * R, ((2 * R - d) / R) ** 2, 0.0))
    # |d phi / d d| on the ramp, with |grad d| <= 1
    slope = np.where((d > R) & (d < 2 * R), 2 * (2 * R - d) / R**2, 0.0)
    return CutoffProfile(float(R), vals, float(np.max(slope, initial=0.0)))


def test_function_psi(u, v, beta, phi: CutoffProfile, boundary=None):
    """[(u - v)^+]^beta phi^2, zeroed on boundary nodes when given."""
    if beta < 1:
        raise ValueError("beta must be >= 1")
    uu = u.values if isinstance(u, GridField) else np.asarray(u, float)
    vv = v.values if isinstance(v, GridField) else np.asarray(v, float)
    psi = np.maximum(uu - vv, 0.0) ** beta * phi.values**2
    if boundary is not None:
        psi = np.where(boundary, 0.0, psi)
    return GridField(psi, kind="testfn", meta={"R": phi.R, "beta": beta})


def _parts(grid, u, v, weight):
    uu = u.values if isinstance(u, GridField) else np.asarray(u, float)
    vv = v.values if isinstance(v, GridField) else np.asarray(v, float)
    w = uu - vv
    pos = np.maximum(w, 0.0)
    grad = gradient_norm(grid, w).values
    a = weight(grid.X, grid.Y)
    return pos, grad, a


def l_tilde(u, v, R, weight: Weight, grid: TubeGrid, distance):
    """Integral over the tube above B_R of a (u - v)^+ |grad(u - v)|^2."""
    pos, grad, a = _parts(grid, u, v, weight)
    mask = np.asarray(distance) < R
    return grid.integrate(np.where(mask, a * pos * grad**2, 0.0))


# ----------------------------------------------------------------------------
# Constants
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaInputs:
    C_a: Optional[float] = None
    C_S: Optional[float] = None
    t: Optional[float] = None
    k: Optional[int] = None
    eps: Optional[float] = None
    Lambda: Optional[float] = None
    q: Optional[float] = None
    L_f: Optional[float] = None
    a_sup: Optional[float] = None
    grad_u: Optional[float] = None
    grad_v: Optional[float] = None
    beta: float = BETA
    tau_prime: float = TAU_PRIME

    def require(self):
        missing = [k for k, v in asdict(self).items() if v is None]
        if missing:
            raise MissingConstant(", ".join(missing))
        return self

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return ThetaInputs(**d)


@dataclass(frozen=True)
class ThetaBundle:
    Theta_A: float
    Theta_B: float
    Theta_C: float
    Theta1: float
    Theta2: float
    tau: float
    Gamma_k: float
    inputs: ThetaInputs
    informational: dict = field(default_factory=dict)

    def theta(self, R):
        return self.Theta1 + self.Theta2 / np.asarray(R, float) ** 2

    def to_dict(self):
        return {
            "Theta_A": self.Theta_A, "Theta_B": self.Theta_B, "Theta_C": self.Theta_C,
            "Theta1": self.Theta1, "Theta2": self.Theta2,
            "tau": None if math.isinf(self.tau) else self.tau,
            "tau_prime": self.inputs.tau_prime, "beta": self.inputs.beta, "Gamma_k": self.Gamma_k,
            "inputs": asdict(self.inputs), "informational": dict(self.informational),
        }


def _theta_parts(C_a_factor, CS_factor, k, t, eps, a_sup):
    G = unit_ball_volume(k)
    ThA = 27 * C_a_factor * CS_factor * G ** ((2 * t - 2 * k) / (k * t)) * eps ** ((2 * t - 2 * k) / t) / 16
    ThB = 27 * CS_factor * G ** ((2 * t - k) / (k * t)) * eps ** ((2 * t - k) / t) / 4
    ThC = 27 * CS_factor * G ** ((2 * t - k) / (k * t)) * eps ** ((2 * t - k) / t) * a_sup
    return ThA, ThB, ThC, G


def _theta1(ThA, ThB, Lambda, q, G, L_f):
    grad_term = 0.0 if Lambda == 0 or (G == 0 and q > 1) else 2 * Lambda**2 * q**2 * G ** (2 * q - 2) * ThA
    return grad_term + L_f * ThB


def theta_constants(inputs: ThetaInputs) -> ThetaBundle:
    """Theta constants at beta = 2, tau' = 1/4.

    Theta_A = 27 C_a^-t C_S^2 Gamma_k^((2t-2k)/(kt)) eps^((2t-2k)/t) / 16
    Theta_B = 27 C_S^2 Gamma_k^((2t-k)/(kt)) eps^((2t-k)/t) / 4
    Theta_C = 27 C_S^2 Gamma_k^((2t-k)/(kt)) eps^((2t-k)/t) ||a||
    Theta_1 = 2 Lambda^2 q^2 G^(2q-2) Theta_A + L_f Theta_B,  Theta_2 = 2 Theta_C
    with G = ||grad u|| + ||grad v||.  With Lambda = 0 the gradient term is dropped.
    """
    i = inputs.require()
    ThA, ThB, ThC, Gk = _theta_parts(i.C_a ** (-i.t), i.C_S**2, i.k, i.t, i.eps, i.a_sup)
    G = i.grad_u + i.grad_v
    Th1 = _theta1(ThA, ThB, i.Lambda, i.q, G, i.L_f)
    denom = 2 * abs(i.Lambda) * i.q * G ** (i.q - 1) if i.Lambda != 0 else 0.0
    tau = 1.0 / denom if denom > 0 else math.inf
    # exponents consistent with the Hoelder step and a linear Sobolev constant
    cA, cB, cC, _ = _theta_parts(i.C_a ** (1 / i.t), i.C_S, i.k, i.t, i.eps, i.a_sup)
    info = {
        "Theta_A_alt": cA, "Theta_B_alt": cB, "Theta_C_alt": cC,
        "Theta1_alt": _theta1(cA, cB, i.Lambda, i.q, G, i.L_f), "Theta2_alt": 2 * cC,
        "note": "alt values use C_a^(1/t) and C_S in place of C_a^(-t) and C_S^2",
    }
    return ThetaBundle(ThA, ThB, ThC, Th1, 2 * ThC, tau, Gk, i, info)


@dataclass(frozen=True)
class Epsilon0:
    epsilon0: float
    epsilon1: float
    target: float
    residual: float
    iterations: int


def epsilon0_solve(inputs: ThetaInputs, gamma, eps1, theta1_fn: Optional[Callable] = None, tol=1e-10):
    """Largest eps in (0, eps1] with Theta_1(eps) <= 0.9 * 2^-gamma, by bisection.

    Only the explicit eps powers vary; the other constants are held fixed.
    The returned root always satisfies the inequality (lower bracket).
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    target = (1 - EPS0_MARGIN) * 2.0 ** (-gamma)
    if theta1_fn is None:
        inputs.replace(eps=eps1).require()

        def theta1_fn(e):
            return theta_constants(inputs.replace(eps=e)).Theta1

    if theta1_fn(eps1) <= target:
        return Epsilon0(eps1, eps1, target, target - theta1_fn(eps1), 0)
    lo, hi = 0.0, eps1
    tiny = eps1 * 1e-12
    if theta1_fn(tiny) > target:
        raise NoAdmissibleEps("Theta_1 exceeds the target even for vanishing eps")
    lo = tiny
    it = 0
    while it < 400:
        it += 1
        mid = 0.5 * (lo + hi)
        if theta1_fn(mid) <= target:
            lo = mid
        else:
            hi = mid
        resid = target - theta1_fn(lo)
        if (hi - lo) <= 1e-3 * tol * eps1 and resid <= tol or hi - lo <= 4 * np.spacing(hi):
            break
    return Epsilon0(lo, eps1, target, target - theta1_fn(lo), it)


# ----------------------------------------------------------------------------
# End-to-end report
# ----------------------------------------------------------------------------


def derive_inputs(problem: EllipticProblem, u, v, t, C_S=None, X_fibres=None):
    """Measure every constant that enters the Theta bundle from the problem and the fields."""
    grid = problem.grid
    chart = grid.chart
    k = chart.k
    C_a = weight_admissibility(problem.weight, t, k, chart.eps, X=X_fibres)
    if C_S is None:
        C_S = sobolev_constant_estimate(problem.weight, t, k, chart.eps).C_S
    uu, vv = u.values, v.values
    m = float(np.max(np.abs(uu)) + np.max(np.abs(vv)))
    idx = np.linspace(0, grid.size - 1, 9).astype(int)
    L_f = lipschitz_probe(problem.reaction, m if m > 0 else 1.0, grid.X[idx], grid.Y[idx])
    a_nodes = problem.weight(grid.X, grid.Y)
    try:
        a_sup = max(problem.weight.sup_norm(chart.eps), float(np.max(np.abs(a_nodes))))
    except ValueError:
        a_sup = float(np.max(np.abs(a_nodes)))
    gu = GRAD_SAFETY * float(np.max(gradient_norm(grid, uu).values))
    gv = GRAD_SAFETY * float(np.max(gradient_norm(grid, vv).values))
    return ThetaInputs(C_a, C_S, float(t), k, chart.eps, problem.Lambda, problem.q, L_f, a_sup, gu, gv)


def _audit_bounds(bundle: ThetaBundle, inputs: ThetaInputs, R, L2R, Lt2R, ca_factor, cs_factor):
    """Upper bounds for A_2R, B_2R, C_2R at beta = 2 given the constant factors."""
    Gk, t, k, e = bundle.Gamma_k, inputs.t, inputs.k, inputs.eps
    b1 = (BETA + 1) ** 2
    pa = 3 * ca_factor * cs_factor * Gk ** ((2 * t - 2 * k) / (k * t)) * e ** ((2 * t - 2 * k) / t) * b1 / 16
    pb = 3 * cs_factor * Gk ** ((2 * t - k) / (k * t)) * e ** ((2 * t - k) / t) * b1
    tau, tp = bundle.tau, inputs.tau_prime
    return {
        "A": (tau + pa / tau) * L2R if math.isfinite(tau) else math.inf,
        "B": pb / 4 * L2R,
        "C": tp * L2R + pb * inputs.a_sup / (4 * tp * R**2) * Lt2R,
    }


@dataclass
class WcpReport:
    constants: ThetaBundle
    ladder: list
    verdicts: dict
    certification: dict
    epsilon: dict
    growth: dict
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return all(v for k, v in self.verdicts.items() if k in ("pointwise", "certified"))

    def to_dict(self):
        return {
            "constants": self.constants.to_dict(),
            "ladder": self.ladder,
            "verdicts": self.verdicts,
            "certification": self.certification,
            "epsilon": self.epsilon,
            "growth": self.growth,
            "notes": list(self.notes),
        }


def _fibre_bump(grid: TubeGrid):
    """Product bump vanishing on every non-periodic face of the grid."""
    vals = np.ones(grid.size)
    coords = np.concatenate([grid.X, grid.Y], axis=-1)
    for a, (ax, per) in enumerate(zip(grid.axes, grid.periodic)):
        if per:
            continue
        lo, hi = ax[0], ax[-1]
        c, hw = 0.5 * (lo + hi), 0.5 * (hi - lo)
        vals *= np.clip(1 - ((coords[:, a] - c) / hw) ** 2, 0, None)
    return vals


def certify(problem: EllipticProblem, u, v, psis, op=None):
    """Largest subsolution residual of u and smallest supersolution residual of v."""
    op = assemble_divergence_operator(problem.grid, problem.weight) if op is None else op
    sub = max(weak_residual(u, p, problem, op) for p in psis)
    sup = min(weak_residual(v, p, problem, op) for p in psis)
    return sub, sup


def verify_wcp(problem: EllipticProblem, u: GridField, v: GridField, radii, growth: GrowthFit,
               center=0.0, t=3.0, inputs: Optional[ThetaInputs] = None, eps1=None, op=None,
               cert_tol=None, pointwise_tol=POINTWISE_TOL, ratio_tol=RATIO_TOL):
    """Run the comparison pipeline on a pair (u, v) and assemble a report.

    ``radii`` is the dyadic ladder R0 * 2^j; L~ is also evaluated at twice
    the top rung so every rung has a contraction partner.
    """
    grid = problem.grid
    chart = grid.chart
    op = assemble_divergence_operator(grid, problem.weight) if op is None else op
    radii = [float(R) for R in radii]
    dist = base_distance(grid, center)
    bnd = grid.boundary
    vol = grid.domain_volume()
    cert_tol = CERT_TOL_REL * vol if cert_tol is None else cert_tol
    notes = []

    # certification against psi_R and non-negative bumps under each cut-off
    bump = _fibre_bump(grid)
    psis = []
    for R in radii + [2 * radii[-1]]:
        phi = cutoff_phi(R, dist)
        psis.append(test_function_psi(u, v, BETA, phi, bnd).values)
        psis.append(np.where(bnd, 0.0, bump * phi.values**2))
    sub, sup = certify(problem, u, v, [p for p in psis if np.any(p > 0)] or [np.zeros(grid.size)], op)
    bdiff = float(np.max(u.values[bnd] - v.values[bnd])) if bnd.any() else -math.inf
    certification = {"sub_residual": sub, "super_residual": sup, "boundary_excess": bdiff,
                     "cert_tol": cert_tol, "test_functions": len(psis)}
    if not (sub <= cert_tol and sup >= -cert_tol and bdiff <= cert_tol):
        raise NotCertified(f"certification failed: sub {sub:.3g}, super {sup:.3g}, boundary {bdiff:.3g} "
                           f"(tol {cert_tol:.3g})", residual=certification)

    if inputs is None:
        inputs = derive_inputs(problem, u, v, t)
    bundle = theta_constants(inputs)
    if eps1 is None:
        X, Y = sample_tube(chart, nx=32, ny=8)
        eps1 = epsilon1(estimate_K1(chart, X, Y))
    e0 = epsilon0_solve(inputs, growth.gamma, eps1)

    pos, grad, a = _parts(grid, u, v, problem.weight)
    dv = grid.dvol()
    core = a * pos * grad**2
    rungs = radii + [2 * radii[-1]]
    lt = [float(np.sum(dv * np.where(dist < R, core, 0.0))) for R in rungs]
    base_diam = float(np.max(dist))
    ladder = []
    audit_ok = True
    audit_alt_ok = True
    sandwich_ok = True
    contraction_ok = True
    G = inputs.grad_u + inputs.grad_v
    for j, R in enumerate(radii):
        phi = cutoff_phi(R, dist)
        gphi = gradient_norm(grid, phi.values).values
        L2R = float(np.sum(dv * core * phi.values**2))
        A = float(np.sum(dv * pos**BETA * grad * phi.values**2))
        B = float(np.sum(dv * pos ** (BETA + 1) * phi.values**2))
        C = float(np.sum(dv * a * pos**BETA * grad * gphi * phi.values))
        th = float(bundle.theta(R))
        ratio = 0.0 if lt[j + 1] == 0 else lt[j] / lt[j + 1]
        bounds = _audit_bounds(bundle, inputs, R, L2R, lt[j + 1], inputs.C_a ** (-inputs.t), inputs.C_S**2)
        alt = _audit_bounds(bundle, inputs, R, L2R, lt[j + 1], inputs.C_a ** (1 / inputs.t), inputs.C_S)
        rung_audit = {}
        for name, val in (("A", A), ("B", B), ("C", C)):
            rung_audit[name] = val
            rung_audit[f"{name}_bound"] = bounds[name]
            rung_audit[f"{name}_ok"] = bool(val <= bounds[name] * (1 + ratio_tol) or val == 0)
            # informational: same bound with the alternative constant exponents
            rung_audit[f"{name}_bound_alt"] = alt[name]
            rung_audit[f"{name}_ok_alt"] = bool(val <= alt[name] * (1 + ratio_tol) or val == 0)
        audit_ok &= rung_audit["A_ok"] and rung_audit["B_ok"] and rung_audit["C_ok"]
        audit_alt_ok &= rung_audit["A_ok_alt"] and rung_audit["B_ok_alt"] and rung_audit["C_ok_alt"]
        sw = lt[j] <= L2R * (1 + 1e-12) + 1e-300 and L2R <= lt[j + 1] * (1 + 1e-12) + 1e-300
        sandwich_ok &= bool(sw)
        contraction_ok &= ratio <= th + ratio_tol
        ladder.append({
            "R": R, "L_tilde": lt[j], "L_tilde_2R": lt[j + 1], "L_2R": L2R, "ratio": ratio,
            "theta": th, "sandwich": bool(sw), "saturated": bool(2 * R >= base_diam),
            "cutoff_gradient_bound": phi.gradient_bound, "audit": rung_audit,
        })
    if any(r["saturated"] for r in ladder):
        notes.append("ladder rungs with 2R beyond the base diameter are saturated")

    theta_max = float(bundle.theta(radii[0]))
    C_iter = growth.C1 * float(np.max(core, initial=0.0))
    it = iteration_lemma_verdict(rungs, lt, theta_max, growth.gamma, C_iter)
    hypothesis_void = not (theta_max < 2.0 ** (-growth.gamma)) or not (chart.eps < eps1)
    if hypothesis_void:
        notes.append("theta(R_min) >= 2^-gamma or eps >= eps1: the theorem's hypothesis is void for this run")
    pointwise = float(np.min(v.values - u.values))
    verdicts = {
        "certified": True,
        "pointwise": bool(pointwise >= -pointwise_tol),
        "pointwise_min_v_minus_u": pointwise,
        "contraction": bool(contraction_ok),
        "iteration": it.status,
        "iteration_detail": it.to_dict(),
        "sandwich": bool(sandwich_ok),
        "audit": bool(audit_ok),
        "audit_alt": bool(audit_alt_ok),
        "hypothesis_void": bool(hypothesis_void),
        "eps_below_eps0": bool(chart.eps < e0.epsilon0 or (e0.epsilon0 == eps1 and chart.eps < eps1)),
    }
    if it.forced_zero and not verdicts["pointwise"]:
        notes.append("iteration verdict ForcedZero but the pointwise check failed")
    return WcpReport(
        bundle, ladder, verdicts, certification,
        {"eps": chart.eps, "epsilon0": e0.epsilon0, "epsilon1": eps1, "target": e0.target,
         "theta_R_min": theta_max, "two_pow_minus_gamma": 2.0 ** (-growth.gamma)},
        growth.to_dict(), notes,
    )


# ----------------------------------------------------------------------------
# Flagship experiment
# ----------------------------------------------------------------------------

FLAGSHIP = {
    "manifold": {"id": "helix", "params": {"a": 1.0, "b": 1.0}},
    "window": [-2.0, 2.0],
    "eps": 0.05,
    "weight": {"offset": 1.0, "coef": 0.1, "power": 0.25, "cap": 2.0},
    "reaction": {"scale": 0.25, "const": 0.0},
    "Lambda": 0.1,
    "q": 2.0,
    "t": 3.0,
    "grid": {"nx": 129, "ny": 17},
    "boundary": {"u": 0.0, "v": 0.1},
    "ladder": {"R0": 0.25, "rungs": 4},
    "center": 0.0,
}


@dataclass
class WcpRun:
    report: WcpReport
    problem: EllipticProblem
    u: GridField
    v: GridField
    solves: dict


def build_problem(cfg, dirichlet=0.0):
    """Chart, grid and elliptic problem from an experiment description."""
    from .analysis import Reaction
    from .fermi import make_chart
    from .geometry import make_manifold
    from .pde import make_grid

    man = cfg["manifold"]
    base = make_manifold(man["id"], man.get("params"))
    window = cfg.get("window")
    chart = make_chart(base, cfg["eps"], window, cfg.get("periodic"))
    grid = make_grid(chart, cfg["grid"]["nx"], cfg["grid"]["ny"])
    return EllipticProblem(grid, Weight.from_dict(cfg["weight"]), float(cfg["Lambda"]), float(cfg["q"]),
                           Reaction.from_dict(cfg["reaction"]), dirichlet)


def run_wcp(cfg=None, inputs_override=None):
    """Solve the two boundary-value problems and verify comparison between them."""
    from dataclasses import replace

    from .analysis import volume_growth_fit
    from .pde import solve

    cfg = dict(FLAGSHIP if cfg is None else cfg)
    pu = build_problem(cfg, float(cfg["boundary"]["u"]))
    pv = replace(pu, dirichlet=float(cfg["boundary"]["v"]))
    su = solve(pu)
    sv = solve(pv, op=su.operator)
    lad = cfg["ladder"]
    radii = [lad["R0"] * 2.0**j for j in range(lad["rungs"])]
    base = pu.grid.chart.base
    center = cfg.get("center", 0.0)
    window = None if isinstance(base, ParamSurface) else tuple(pu.grid.chart.domain)
    growth = volume_growth_fit(base, center, radii, window=window)
    inputs = derive_inputs(pu, su.u, sv.u, cfg.get("t", 3.0))
    if inputs_override:
        inputs = inputs.replace(**inputs_override)
    report = verify_wcp(pu, su.u, sv.u, radii, growth, center=center, t=cfg.get("t", 3.0),
                        inputs=inputs, op=su.operator)
    solves = {"u": {"iterations": su.iterations, "residual": su.residual},
              "v": {"iterations": sv.iterations, "residual": sv.residual},
              "m_matrix": bool(su.operator.m_matrix)}
    return WcpRun(report, pu, su.u, sv.u, solves)
