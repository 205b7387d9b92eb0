import math

import numpy as np
import pytest

from tubewcp.analysis import unit_ball_volume, volume_growth_fit
from tubewcp.errors import MissingConstant, NoAdmissibleEps, NotCertified
from tubewcp.pde import GridField
from tubewcp.wcp import (
    ThetaInputs,
    _fibre_bump,
    base_distance,
    cutoff_phi,
    epsilon0_solve,
    l_tilde,
    test_function_psi as make_psi,
    theta_constants,
    verify_wcp,
)

INPUTS = ThetaInputs(C_a=0.007, C_S=0.03, t=3.0, k=2, eps=0.05, Lambda=0.1, q=2.0, L_f=0.2625,
                     a_sup=1.05, grad_u=0.01, grad_v=0.02)


def test_cutoff_profile():
    d = np.linspace(0, 3, 301)
    phi = cutoff_phi(1.0, d)
    assert np.all(phi.values[d <= 1] == 1.0) and np.all(phi.values[d >= 2] == 0.0)
    slope = np.abs(np.diff(phi.values) / np.diff(d))
    assert slope.max() <= 2.0 + 1e-12 and phi.gradient_bound <= 2.0
    with pytest.raises(ValueError):
        cutoff_phi(0.0, d)


def test_psi_is_admissible(flagship_run):
    grid = flagship_run.problem.grid
    phi = cutoff_phi(0.5, base_distance(grid, 0.0))
    u = GridField(flagship_run.v.values + 0.1 * _fibre_bump(grid))
    psi = make_psi(u, flagship_run.v, 2.0, phi, grid.boundary).values
    assert psi.min() >= 0 and np.all(psi[grid.boundary] == 0) and psi.max() > 0


def test_base_distance_is_arc_length(flagship_run):
    grid = flagship_run.problem.grid
    d = base_distance(grid, 0.0)
    assert np.allclose(d, np.abs(grid.X[:, 0]), atol=1e-12)


def test_theta_constants_by_hand():
    b = theta_constants(INPUTS)
    G2 = unit_ball_volume(2)
    e, t, k = 0.05, 3.0, 2
    thA = 27 * 0.007**-3 * 0.03**2 * G2 ** ((2 * t - 2 * k) / (k * t)) * e ** ((2 * t - 2 * k) / t) / 16
    thB = 27 * 0.03**2 * G2 ** ((2 * t - k) / (k * t)) * e ** ((2 * t - k) / t) / 4
    thC = 27 * 0.03**2 * G2 ** ((2 * t - k) / (k * t)) * e ** ((2 * t - k) / t) * 1.05
    assert b.Theta_A == pytest.approx(thA) and b.Theta_B == pytest.approx(thB) and b.Theta_C == pytest.approx(thC)
    G = 0.03
    assert b.Theta1 == pytest.approx(2 * 0.1**2 * 4 * G**2 * thA + 0.2625 * thB)
    assert b.Theta2 == pytest.approx(2 * thC)
    assert b.tau == pytest.approx(1 / (2 * 0.1 * 2 * G))
    assert b.theta(0.5) == pytest.approx(b.Theta1 + b.Theta2 / 0.25)
    assert "Theta1_alt" in b.informational


def test_theta_is_monotone_in_eps():
    vals = [theta_constants(INPUTS.replace(eps=e)).theta(0.25) for e in (0.02, 0.05, 0.1, 0.2)]
    assert np.all(np.diff(vals) > 0)


def test_tau_without_gradient_term():
    b = theta_constants(INPUTS.replace(Lambda=0.0))
    assert math.isinf(b.tau) and b.to_dict()["tau"] is None


def test_missing_constant():
    with pytest.raises(MissingConstant):
        theta_constants(ThetaInputs(C_a=1.0))
    with pytest.raises(MissingConstant):
        epsilon0_solve(ThetaInputs(C_a=1.0), 1.0, 0.9)


def test_epsilon0_cases():
    res = epsilon0_solve(INPUTS.replace(Lambda=0.0, L_f=0.0), 1.0, 0.8)
    assert res.epsilon0 == res.epsilon1 == 0.8
    res = epsilon0_solve(INPUTS, 1.0, 1.0, theta1_fn=lambda e: e)
    assert res.epsilon0 == pytest.approx(0.45, abs=1e-10)
    assert res.epsilon0 <= 0.45 and 0 <= res.residual <= 1e-10
    with pytest.raises(ValueError):
        epsilon0_solve(INPUTS, 0.0, 1.0)
    with pytest.raises(NoAdmissibleEps):
        epsilon0_solve(INPUTS, 1.0, 1.0, theta1_fn=lambda e: 1.0)


def test_l_tilde_is_monotone_in_R(flagship_run):
    grid = flagship_run.problem.grid
    d = base_distance(grid, 0.0)
    u = GridField(flagship_run.v.values + 0.1 * _fibre_bump(grid))
    vals = [l_tilde(u, flagship_run.v, R, flagship_run.problem.weight, grid, d) for R in (0.25, 0.5, 1, 2, 4)]
    assert vals[0] > 0 and np.all(np.diff(vals) >= 0)


def test_non_subsolution_is_not_certified(flagship_run):
    grid = flagship_run.problem.grid
    u = GridField(flagship_run.v.values + 0.1 * _fibre_bump(grid))
    growth = volume_growth_fit(grid.chart.base, 0.0, [0.25, 0.5, 1, 2], window=(-2, 2))
    with pytest.raises(NotCertified):
        verify_wcp(flagship_run.problem, u, flagship_run.v, [0.25, 0.5, 1, 2], growth)


@pytest.fixture(scope="module")
def bump_report(flagship_run):
    """Report on a pair whose positive part is an interior bump; certification is skipped."""
    grid = flagship_run.problem.grid
    u = GridField(flagship_run.v.values + 0.1 * _fibre_bump(grid))
    growth = volume_growth_fit(grid.chart.base, 0.0, [0.25, 0.5, 1, 2], window=(-2, 2))
    return verify_wcp(flagship_run.problem, u, flagship_run.v, [0.25, 0.5, 1, 2], growth, cert_tol=math.inf)


def test_bump_pair_ladder_is_nontrivial(bump_report):
    ladder = bump_report.ladder
    assert all(r["L_tilde"] > 0 for r in ladder)
    assert all(r["sandwich"] for r in ladder)
    assert not bump_report.verdicts["pointwise"]


def test_bump_pair_satisfies_alternative_bounds(bump_report):
    for r in bump_report.ladder:
        assert r["audit"]["A_ok_alt"] and r["audit"]["B_ok_alt"] and r["audit"]["C_ok_alt"]
        assert r["audit"]["A_ok"] and r["audit"]["C_ok"]
    assert bump_report.verdicts["audit_alt"]


def test_bump_pair_exposes_squared_sobolev_factor(bump_report):
    """With C_S squared the B bound is too small for this pair; the linear factor is not."""
    ratios = [r["audit"]["B"] / r["audit"]["B_bound"] for r in bump_report.ladder]
    assert all(1.5 < q < 3.0 for q in ratios)
    assert not bump_report.verdicts["audit"]


def test_flagship_report_structure(flagship_run):
    doc = flagship_run.report.to_dict()
    assert {"constants", "ladder", "verdicts", "certification", "epsilon", "growth"} <= set(doc)
    assert len(doc["ladder"]) == 4
    assert doc["epsilon"]["epsilon0"] <= doc["epsilon"]["epsilon1"]
    assert flagship_run.solves["m_matrix"]
