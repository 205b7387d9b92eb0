"""Acceptance suite: one test per criterion, each with its runtime budget."""

import itertools
import math
import time

import numpy as np
import pytest
from oracles import chain_bound, iteration_brute_force, strip_oracle

from tubewcp.analysis import Reaction, Weight, iteration_lemma_verdict
from tubewcp.fermi import (
    epsilon1,
    estimate_K1,
    make_chart,
    pullback_metric_closed_form,
    pullback_metric_direct,
    sample_tube,
    volume_distortion,
)
from tubewcp.geometry import arctan_spiral, circle, helix, line, space_curvature, sphere, torus
from tubewcp.pde import EllipticProblem, make_grid, solve, strong_residual
from tubewcp.reach import reach_at
from tubewcp.wcp import ThetaInputs, epsilon0_solve, theta_constants

POLAR = ((0.0, 2 * math.pi), (0.2, math.pi - 0.2))


def charts(eps=0.3):
    """Charts over circle, helix, sphere, torus, line and a radius-2 circle."""
    return {
        "circle": make_chart(circle(), eps),
        "helix": make_chart(helix(), eps, (-4.0, 4.0)),
        "sphere": make_chart(sphere(), eps, POLAR),
        "torus": make_chart(torus(2.0, 1.0), eps),
        "line": make_chart(line(), eps, (-2.0, 2.0)),
        "circle2": make_chart(circle(2.0), eps),
    }


class Budget:
    def __init__(self, seconds):
        self.seconds = seconds

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f} s, budget {self.seconds} s"


@pytest.mark.criterion(1, "closed-form pullback metric matches the Jacobian metric")
def test_metric_decomposition():
    with Budget(5):
        for name in ("circle", "helix", "sphere"):
            ch = charts(0.3)[name]
            X, Y = sample_tube(ch, 32, 16)
            closed = pullback_metric_closed_form(ch, X, Y).g
            direct = pullback_metric_direct(ch, X, Y).g
            scale = np.maximum(np.abs(direct), 1.0)
            assert np.max(np.abs(closed - direct) / scale) <= 1e-6, name


@pytest.mark.criterion(2, "volume distortion: unit on the base, linear bound, sandwich")
def test_volume_distortion_chain():
    with Budget(5):
        for name, ch in charts(0.3).items():
            X, _ = sample_tube(ch, 32, 1)
            lam0 = volume_distortion(ch, X, np.zeros((len(X), ch.k)))
            assert np.max(np.abs(lam0 - 1.0)) <= 1e-12, name

            K1 = estimate_K1(ch, *sample_tube(ch, 32, 16))
            Xh, Yh = sample_tube(ch, 47, 23, offset=0.5)
            ny = np.linalg.norm(Yh, axis=-1)
            lam = volume_distortion(ch, Xh, Yh)
            assert np.all(np.abs(lam - 1.0) <= K1 * ny + 1e-15), name

            e1 = epsilon1(K1)
            inside = make_chart(ch.base, min(0.999 * e1, 0.999), ch.domain, ch.periodic)
            lam = volume_distortion(inside, *sample_tube(inside, 32, 16, offset=0.5))
            assert lam.min() >= 0.5 and lam.max() <= 1.5, name


@pytest.mark.criterion(3, "arctan spiral: reach decays while curvature stays bounded")
def test_spiral_non_example():
    with Budget(10):
        spiral = arctan_spiral()
        rhos = [reach_at(spiral, x)[0] for x in (10, 20, 40)]
        assert rhos[0] > rhos[1] > rhos[2]
        assert rhos[2] < 0.01
        kappa, _ = space_curvature(spiral, np.linspace(0.0, 50.0, 2001))
        assert kappa.min() >= 0.5 - 1e-6 and kappa.max() < 1.0


def _random_table(rng):
    n = int(rng.integers(2, 7))
    gamma = float(rng.uniform(0.2, 3.0))
    crit = 2.0 ** (-gamma)
    kind = rng.choice(["below", "equal", "above"], p=[0.7, 0.15, 0.15])
    theta = {"below": crit * rng.uniform(0.0, 0.999), "equal": crit, "above": crit * rng.uniform(1.0, 2.0)}[kind]
    radii = list(float(rng.uniform(0.1, 2.0)) * 2.0 ** np.arange(n))
    L = np.zeros(n)
    L[-1] = rng.uniform(0.0, 5.0) * (rng.random() < 0.8)
    g = np.zeros(n)
    if rng.random() < 0.3:
        g[:-1] = rng.uniform(0.0, 0.5, n - 1)
    for j in range(n - 2, -1, -1):
        L[j] = min(L[j + 1], theta * L[j + 1] + g[j]) * rng.uniform(0.0, 1.0)
    C = float(np.max(L / np.asarray(radii) ** gamma)) * rng.uniform(1.0, 3.0) + 1e-3
    # occasional single-hypothesis violations
    r = rng.random()
    if r < 0.08:
        L[0] = theta * L[1] + g[0] + rng.uniform(0.01, 1.0)
        L[1:] = np.maximum(L[1:], L[0])
    elif r < 0.14:
        C *= 0.1
    elif r < 0.20:
        radii[-1] *= 1.5
    elif r < 0.25:
        g[-1] = 1e-3
    elif r < 0.29:
        L[0] = -1e-3
    return radii, list(L), theta, gamma, C, list(g)


@pytest.mark.criterion(4, "iteration lemma verdict agrees with a brute-force checker")
def test_iteration_lemma_randomized():
    rng = np.random.default_rng(20240611)
    counts = {"forced": 0, "violated": 0, "strict": 0}
    with Budget(2):
        for _ in range(1000):
            radii, L, theta, gamma, C, g = _random_table(rng)
            verdict = iteration_lemma_verdict(radii, L, theta, gamma, C, g=g)
            ok, chain = iteration_brute_force(radii, L, theta, gamma, C, g=g)
            assert verdict.forced_zero == ok
            if theta >= 2.0 ** (-gamma):
                assert not verdict.forced_zero
                counts["strict"] += 1
            if verdict.forced_zero:
                counts["forced"] += 1
                assert len(chain) == len(radii) - 1
                assert all(lhs <= rhs for lhs, rhs in chain)
                assert L[0] <= chain_bound(radii, L, theta, gamma, C, g) * (1 + 1e-12)
            else:
                counts["violated"] += 1
        # the borderline contraction factor is rejected even for an all-zero table
        for gamma in (0.5, 1.0, 1.3, 2.0):
            assert not iteration_lemma_verdict([1.0, 2.0], [0, 0], 2.0 ** (-gamma), gamma, 1.0).forced_zero
    assert counts["forced"] > 200 and counts["violated"] > 200 and counts["strict"] > 100


def _manufactured_errors(nx, ny, eps=0.5, length=2.0):
    grid = make_grid(make_chart(line(), eps, (0.0, length)), nx, ny)

    def exact(X, Y):
        return np.sin(X[:, 0]) * np.cos(Y[:, 0])

    prob = EllipticProblem(grid, Weight(), reaction=Reaction(func=lambda X, Y, u: 2 * exact(X, Y)),
                           dirichlet=exact)
    res = solve(prob)
    ue = exact(grid.X, grid.Y)
    inner = ~grid.boundary
    err = np.max(np.abs(res.u.values - ue))
    consistency = np.max(np.abs(strong_residual(prob, res.operator, ue)[inner]))
    return err, consistency


@pytest.mark.criterion(5, "second-order convergence for a manufactured solution")
def test_manufactured_convergence_order():
    with Budget(60):
        sizes = [(33, 9), (65, 17), (129, 33), (257, 65)]
        errs, cons = zip(*[_manufactured_errors(nx, ny) for nx, ny in sizes])
    order = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    corder = np.log2(np.array(cons[:-1]) / np.array(cons[1:]))
    assert order.min() >= 1.8, order
    assert corder.min() >= 1.8, corder


def _strip(nx, ny, eps):
    return make_grid(make_chart(line(), eps, (0.0, 1.0)), nx, ny)


@pytest.mark.criterion(6, "strip problems match independent 1D oracles")
def test_strip_oracles():
    with Budget(30):
        # constant weight, unit source: the discrete and continuous solutions coincide
        eps = 0.5
        g = _strip(9, 41, eps)
        res = solve(EllipticProblem(g, Weight(), reaction=Reaction(0.0, 1.0),
                                    dirichlet=lambda X, Y: (eps**2 - Y[:, 0] ** 2) / 2))
        y = g.Y[:, 0]
        assert np.max(np.abs(res.u.values - (eps**2 - y**2) / 2)) <= 1e-6

        # variable weight, linear reaction
        g = _strip(9, 65, eps)
        w = Weight(1.0, 1.0, 2.0)
        ys = g.axes[1]
        mid = 0.5 * (ys[1:] + ys[:-1])
        ref = strip_oracle(ys, w.radial(np.abs(mid)), scale=-0.5, const=1.0, left=0.1, right=-0.2)
        prob = EllipticProblem(g, w, reaction=Reaction(-0.5, 1.0),
                               dirichlet=lambda X, Y: np.interp(Y[:, 0], ys, ref))
        u = solve(prob).u.values.reshape(g.shape)
        assert np.max(np.abs(u - ref[None, :])) <= 1e-6

        # quadratic gradient term
        g = _strip(9, 129, eps)
        ys = g.axes[1]
        ref = strip_oracle(ys, np.ones(len(ys) - 1), Lambda=1.0, q=2, const=1.0)
        prob = EllipticProblem(g, Weight(), 1.0, 2.0, Reaction(0.0, 1.0),
                               dirichlet=lambda X, Y: np.interp(Y[:, 0], ys, ref))
        u = solve(prob).u.values.reshape(g.shape)
        assert np.max(np.abs(u - ref[None, :])) <= 1e-6


@pytest.mark.criterion(7, "flagship comparison run on the helix tube")
def test_flagship_run(flagship_run):
    rep = flagship_run.report
    v = rep.verdicts
    assert v["certified"]
    assert v["pointwise_min_v_minus_u"] >= -1e-10
    for rung in rep.ladder:
        assert rung["ratio"] <= rung["theta"] + 0.02
        assert rung["L_tilde"] <= rung["L_2R"] * (1 + 1e-12) + 1e-300
        assert rung["L_2R"] <= rung["L_tilde_2R"] * (1 + 1e-12) + 1e-300
    assert v["iteration"] == "ForcedZero"
    assert v["sandwich"] and v["contraction"]
    assert not v["hypothesis_void"] and v["eps_below_eps0"]
    assert flagship_run.elapsed < 300


@pytest.mark.criterion(8, "estimate-chain audit on the flagship run")
def test_flagship_audit(flagship_run):
    rep = flagship_run.report
    for rung in rep.ladder:
        a = rung["audit"]
        for name in ("A", "B", "C"):
            assert a[name] <= a[f"{name}_bound"] * 1.02 or a[name] == 0, name
    assert rep.verdicts["audit"]


@pytest.mark.criterion(9, "epsilon_0 is monotone and meets its target at the root")
def test_epsilon0_sweep():
    base = ThetaInputs(C_a=0.007, C_S=0.03, t=3.0, k=2, eps=0.05, Lambda=0.1, q=2.0, L_f=0.25,
                       a_sup=1.05, grad_u=0.01, grad_v=0.02)
    Lfs, Lams, gammas = (1.0, 2.0, 4.0), (0.5, 1.0, 2.0), (0.5, 1.0, 2.0)
    with Budget(5):
        e0 = np.empty((3, 3, 3))
        for (i, Lf), (j, lam), (k, gam) in itertools.product(enumerate(Lfs), enumerate(Lams), enumerate(gammas)):
            inputs = base.replace(L_f=Lf, Lambda=lam)
            res = epsilon0_solve(inputs, gam, 1.0)
            assert res.epsilon0 < res.epsilon1, "constraint must bind"
            th1 = theta_constants(inputs.replace(eps=res.epsilon0)).Theta1
            assert th1 <= 0.9 * 2.0 ** (-gam)
            assert 0.0 <= res.residual <= 1e-10
            e0[i, j, k] = res.epsilon0
    for axis in range(3):
        assert np.all(np.diff(e0, axis=axis) <= 0), axis
