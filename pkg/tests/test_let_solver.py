import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import let_reference, random_pair, two_dirac_hk2
from hkgeo.errors import DimensionMismatch, IndexOutOfRange, TooLarge
from hkgeo.let_solver import (
    SolverOptions,
    TransportPlan,
    brute_force_let,
    entropy_F,
    hk_distance,
    hk_squared,
    let_objective,
    solve_let,
)
from hkgeo.measures import DiscreteMeasure


def test_entropy_function_values():
    assert entropy_F(0.0) == 1.0
    assert entropy_F(1.0) == 0.0
    assert math.isclose(float(entropy_F(math.e)), 1.0)


@pytest.mark.parametrize("rho", [0.0, 0.3, 1.0, 1.5, 1.57])
@pytest.mark.parametrize("masses", [(1.0, 1.0), (0.5, 2.0), (3.0, 0.1)])
def test_two_dirac_closed_form(rho, masses):
    mu0 = DiscreteMeasure([[0.0, 0.0]], [masses[0]])
    mu1 = DiscreteMeasure([[rho, 0.0]], [masses[1]])
    hk2, plan, cert = solve_let(mu0, mu1)
    assert abs(hk2 - two_dirac_hk2(*masses, rho)) <= 1e-9
    assert cert.passes(1e-9)
    # the plan weight is r0 r1 cos(rho)
    assert math.isclose(plan.dense()[0, 0], math.sqrt(masses[0] * masses[1]) * math.cos(rho), rel_tol=1e-7)


def test_far_supports_cost_their_total_mass():
    mu0 = DiscreteMeasure([[0.0], [0.1]], [1.0, 0.5])
    mu1 = DiscreteMeasure([[3.0]], [2.0])
    hk2, plan, _ = solve_let(mu0, mu1)
    assert hk2 == 3.5
    assert plan.dense().sum() == 0.0


def test_empty_side():
    hk2, plan, _ = solve_let(DiscreteMeasure.empty(1), DiscreteMeasure.dirac([0.0], 2.0))
    assert hk2 == 2.0 and plan.shape == (0, 1)


@pytest.mark.parametrize("seed", range(10))
def test_matches_independent_quasi_newton_solve(seed):
    rng = np.random.default_rng(seed)
    mu0, mu1 = random_pair(rng, max_atoms=5, box=1.5)
    hk2, _, _ = solve_let(mu0, mu1)
    assert abs(hk2 - let_reference(mu0, mu1)) <= 1e-7


@pytest.mark.parametrize("seed", range(5))
def test_matches_brute_force(seed):
    mu0, mu1 = random_pair(np.random.default_rng(100 + seed))
    assert abs(solve_let(mu0, mu1)[0] - brute_force_let(mu0, mu1)) <= 1e-8


def test_brute_force_refuses_large_instances():
    mu = DiscreteMeasure(np.zeros((5, 1)) + np.arange(5)[:, None], np.ones(5))
    with pytest.raises(TooLarge):
        brute_force_let(mu, mu)


def test_plan_value_and_marginal_densities_are_consistent(rng):
    mu0, mu1 = random_pair(rng, max_atoms=6)
    hk2, plan, cert = solve_let(mu0, mu1)
    assert math.isclose(let_objective(plan, mu0, mu1), hk2, rel_tol=1e-12)
    eta = plan.dense()
    assert np.allclose(plan.sigma0 * mu0.masses, eta.sum(axis=1))
    assert np.allclose(plan.sigma1 * mu1.masses, eta.sum(axis=0))
    assert abs(cert.primal_value - cert.dual_value) <= 1e-9


def test_plan_entries_validated():
    mu = DiscreteMeasure.dirac([0.0])
    with pytest.raises(IndexOutOfRange):
        TransportPlan.from_entries([(1, 0, 0.5)], mu, mu)
    with pytest.raises(IndexOutOfRange):
        let_objective([(0, 3, 0.5)], mu, mu)
    assert let_objective([(0, 0, 1.0)], mu, mu) == 0.0


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        solve_let(DiscreteMeasure.dirac([0.0]), DiscreteMeasure.dirac([0.0, 0.0]))


measure_st = st.lists(st.tuples(st.floats(0, 2), st.floats(0.1, 3)), min_size=1, max_size=3)


def _m(rows):
    a = np.array(rows)
    return DiscreteMeasure(a[:, :1], a[:, 1])


@given(measure_st, measure_st)
@settings(max_examples=30, deadline=None)
def test_symmetry(a, b):
    mu0, mu1 = _m(a), _m(b)
    assert math.isclose(hk_squared(mu0, mu1), hk_squared(mu1, mu0), abs_tol=1e-9)


@given(measure_st, measure_st, st.floats(0.1, 10))
@settings(max_examples=30, deadline=None)
def test_homogeneous_of_degree_one_in_mass(a, b, k):
    mu0, mu1 = _m(a), _m(b)
    assert math.isclose(hk_squared(mu0.scaled(k), mu1.scaled(k)), k * hk_squared(mu0, mu1), rel_tol=1e-7, abs_tol=1e-9)


@given(measure_st, measure_st, measure_st)
@settings(max_examples=30, deadline=None)
def test_triangle_inequality(a, b, c):
    mu0, mu1, mu2 = _m(a), _m(b), _m(c)
    assert hk_distance(mu0, mu2) <= hk_distance(mu0, mu1) + hk_distance(mu1, mu2) + 1e-7


def test_parameter_rescaling_matches_two_point_formula():
    # HK_{alpha,beta}^2 = (4/beta) HK^2 at positions scaled by sqrt(beta/(4 alpha))
    alpha, beta, rho = 2.0, 1.0, 0.8
    mu0, mu1 = DiscreteMeasure.dirac([0.0], 1.5), DiscreteMeasure.dirac([rho], 0.5)
    expected = (4 / beta) * two_dirac_hk2(1.5, 0.5, rho / math.sqrt(4 * alpha / beta))
    assert math.isclose(hk_squared(mu0, mu1, alpha, beta), expected, rel_tol=1e-9)


def test_seed_does_not_change_result(rng):
    mu0, mu1 = random_pair(rng)
    a = solve_let(mu0, mu1, SolverOptions(seed=1))[0]
    b = solve_let(mu0, mu1, SolverOptions(seed=7))[0]
    assert abs(a - b) <= 1e-12
