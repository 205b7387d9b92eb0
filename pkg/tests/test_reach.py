import math

import numpy as np
import pytest

from tubewcp.errors import InsufficientSamples
from tubewcp.geometry import arctan_spiral, circle, helix, line, space_curvature, sphere
from tubewcp.reach import (
    local_fold_radius,
    pairwise_reach,
    parallel_lines,
    reach_at,
    sample_manifold,
    tube_exists,
)


def test_fold_radius_is_capped():
    assert np.allclose(local_fold_radius(circle(0.5), np.array([0.0, 1.0])), 0.5)
    assert np.allclose(local_fold_radius(circle(3.0), np.array([0.0])), 1.0)
    assert np.allclose(local_fold_radius(line(), np.array([0.0])), 1.0)
    assert np.allclose(local_fold_radius(sphere(0.5), np.array([[1.0, 1.0]])), 0.5)


def test_circle_and_line_reach():
    res = pairwise_reach(sample_manifold(circle(), circle().domain, 400))
    assert res.min_rho == pytest.approx(1.0)
    assert pairwise_reach(sample_manifold(circle(0.5), circle(0.5).domain, 400)).min_rho == pytest.approx(0.5)
    assert pairwise_reach(sample_manifold(line(), (-5, 5), 201)).min_rho == pytest.approx(1.0)


def test_parallel_lines_meet_halfway():
    ok, witnesses, res = tube_exists(sample_manifold(parallel_lines(0.6), (-3, 3), 241), 0.35)
    assert not ok
    assert res.min_rho == pytest.approx(0.3)
    w = witnesses[0]
    assert w["collides"] and w["residual"] == pytest.approx(0.0, abs=1e-12)
    assert abs(w["v"][0]) == pytest.approx(0.3)
    assert tube_exists(sample_manifold(parallel_lines(0.6), (-3, 3), 241), 0.25)[0]


def test_refinement_never_increases_the_estimate():
    spiral = arctan_spiral()
    coarse = pairwise_reach(sample_manifold(spiral, (30, 40), 201)).min_rho
    fine = pairwise_reach(sample_manifold(spiral, (30, 40), 401)).min_rho
    assert fine <= coarse


def test_spiral_reach_shrinks_with_bounded_curvature():
    rhos = [reach_at(arctan_spiral(), x)[0] for x in (10, 20, 40)]
    assert rhos[0] > rhos[1] > rhos[2]
    assert rhos[2] < 0.01
    kappa, _ = space_curvature(arctan_spiral(), np.linspace(0, 60, 601))
    assert np.all(kappa >= 0.5 - 1e-6) and np.all(kappa < 1)


def test_spiral_tube_fails_with_colliding_witness():
    ok, witnesses, _ = tube_exists(sample_manifold(arctan_spiral(), (50, 50 + 4 * math.pi), 2001), 0.05)
    assert not ok
    assert witnesses and witnesses[0]["collides"]


def test_helix_tube_exists():
    ok, _, res = tube_exists(sample_manifold(helix(), (-6, 6), 1201), 0.45)
    assert ok and res.min_rho == pytest.approx(1.0)


def test_too_coarse_sampling_raises():
    with pytest.raises(InsufficientSamples):
        pairwise_reach(sample_manifold(line(), (-5, 5), 11))
