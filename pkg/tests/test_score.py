import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from consistency_lab import AtomicTarget, GaussianMixtureTarget
from consistency_lab.rng import make_rng
from consistency_lab.score import (
    j_matrix,
    j_matrix_at,
    score,
    score_jacobian,
    score_jacobian_fd,
    score_mc_estimate,
)
from consistency_lab.targets import point_mass

from conftest import random_atomic


def tanh_score(ab, x):
    return (math.sqrt(ab) * np.tanh(math.sqrt(ab) * x / (1 - ab)) - x) / (1 - ab)


def test_point_mass_score():
    x = np.array([[0.3, -1.2], [0.0, 0.0]])
    np.testing.assert_allclose(score(point_mass([0.0, 0.0]), 0.7, x), -x / 0.3, rtol=1e-14)


def test_gaussian_score(gaussian_2d):
    mu = np.array([1.0, -0.5])
    x = np.array([[0.2, 0.4], [3.0, -1.0]])
    np.testing.assert_allclose(score(gaussian_2d, 0.36, x), -(x - 0.6 * mu), rtol=1e-13)


def test_two_atom_score_closed_form(two_atoms_1d):
    x = np.linspace(-3, 3, 41)[:, None]
    for ab in (0.01, 0.5, 0.99):
        np.testing.assert_allclose(score(two_atoms_1d, ab, x)[:, 0], tanh_score(ab, x[:, 0]), rtol=1e-12, atol=1e-12)
    assert score(two_atoms_1d, 0.5, np.array([0.3]))[0] == pytest.approx(-0.0335840076252764130738, rel=1e-12)


def test_closed_form_jacobians(gaussian_2d):
    np.testing.assert_allclose(score_jacobian(point_mass([0.0, 0.0]), 0.25, np.array([1.0, 2.0])), -np.eye(2) / 0.75)
    np.testing.assert_allclose(score_jacobian(gaussian_2d, 0.25, np.array([1.0, 2.0])), -np.eye(2), atol=1e-14)


def test_jacobian_matches_finite_differences(rng):
    for _ in range(30):
        t = random_atomic(rng)
        ab = float(rng.uniform(0.05, 0.95))
        x = 2 * rng.standard_normal(t.dim)
        an = score_jacobian(t, ab, x)
        fd = score_jacobian_fd(t, ab, x)
        assert np.linalg.norm(an - fd) <= 1e-4 * max(np.linalg.norm(an), 1e-12)
        assert np.max(np.abs(an - an.T)) <= 1e-8


def test_two_atom_j_scalar_both_routes(two_atoms_1d):
    x = np.array([0.0])
    j = j_matrix_at(two_atoms_1d, 0.5, x)
    via_score = -(1 - 0.5) * score_jacobian(two_atoms_1d, 0.5, x)
    assert j[0, 0] == pytest.approx(0.0, abs=1e-10)
    assert j[0, 0] == pytest.approx(via_score[0, 0], abs=1e-10)
    xs = np.linspace(-4, 4, 101)[:, None]
    assert np.all(j_matrix_at(two_atoms_1d, 0.3, xs)[:, 0, 0] <= 1 + 1e-12)


def test_point_mass_j_is_identity(sched64):
    x = np.random.default_rng(0).standard_normal((5, 2))
    np.testing.assert_allclose(j_matrix(point_mass([0.0, 0.0]), sched64, 10, x), np.broadcast_to(np.eye(2), (5, 2, 2)))


def test_mc_estimate_exact_for_point_mass(rng):
    est = score_mc_estimate(point_mass([0.5]), 0.3, np.array([1.0]), 10, rng)
    assert est.estimate[0] == pytest.approx(score(point_mass([0.5]), 0.3, np.array([1.0]))[0], rel=1e-12)


def test_mc_estimate_two_atoms(two_atoms_1d, rng):
    est = score_mc_estimate(two_atoms_1d, 0.5, np.array([0.3]), 1_000_000, rng)
    exact = tanh_score(0.5, 0.3)
    assert abs(est.estimate[0] - exact) <= 3 * est.stderr[0]
    assert not est.degenerate


def test_mc_estimate_flags_degeneracy(rng):
    est = score_mc_estimate(AtomicTarget([[1.0], [-1.0]]), 1 - 1e-15, np.array([40.0]), 1000, rng)
    assert est.degenerate


def test_score_finite_far_away():
    assert np.all(np.isfinite(score(AtomicTarget([[1.0], [-1.0]]), 1 - 1e-12, np.array([[1e5]]))))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31), ab=st.floats(0.01, 0.99))
def test_jacobian_identity_property(seed, ab):
    r = make_rng(seed)
    t = random_atomic(r)
    x = 2 * r.standard_normal((10, t.dim))
    dev = j_matrix_at(t, ab, x) + (1 - ab) * score_jacobian(t, ab, x)
    assert np.max(np.abs(dev)) < 1e-8
