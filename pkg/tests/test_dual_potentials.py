import math

import numpy as np
import pytest

from conftest import random_pair
from hkgeo.dual_potentials import (
    L_cost,
    backward_L_transform,
    check_tightness,
    forward_L_transform,
    monge_map_from_potential,
    phi0_from_xi,
    phi1_from_xi,
    potentials_from_plan,
    xi_from_phi0,
    xi_from_phi1,
)
from hkgeo.errors import NotOptimal, VertexRegion
from hkgeo.let_solver import OptimalityCertificate, solve_let
from hkgeo.measures import DiscreteMeasure, pairwise_distances
from hkgeo.hopf_lax import GridFunction
from hkgeo.cone_geometry import monge_cost, dilation_transport_apply


def test_cost_is_infinite_beyond_quarter_turn():
    assert L_cost(0.0) == 0.0
    assert math.isclose(float(L_cost(math.pi / 3)), math.log(2.0))
    assert L_cost(math.pi / 2) == math.inf
    assert math.isclose(float(L_cost(1.0, tau=2.0)), -math.log(math.cos(1.0)) / 2)


def test_parametrisations_are_inverse():
    phi = np.array([-1.0, 0.0, 0.3])
    for tau in (0.5, 1.0, 2.0):
        assert np.allclose(phi0_from_xi(xi_from_phi0(phi, tau), tau), phi)
        assert np.allclose(phi1_from_xi(xi_from_phi1(phi, tau), tau), phi)
    assert phi0_from_xi(-0.5) == -math.inf


def test_two_dirac_potentials():
    mu0 = DiscreteMeasure.dirac([0.0])
    mu1 = DiscreteMeasure.dirac([math.pi / 3])
    _, plan, _ = solve_let(mu0, mu1)
    pair = potentials_from_plan(plan, mu0, mu1)
    assert math.isclose(pair.phi0[0], -math.log(2) / 2, rel_tol=1e-7)
    assert math.isclose(pair.phi1[0], math.log(2) / 2, rel_tol=1e-7)
    assert math.isclose(pair.duality_value(mu0, mu1), 0.5, rel_tol=1e-7)
    assert pair.constraint_violation() <= 1e-7


def test_far_atoms_get_extreme_potentials():
    mu0 = DiscreteMeasure.dirac([0.0], 1.5)
    mu1 = DiscreteMeasure.dirac([2.0], 1.0)
    _, plan, _ = solve_let(mu0, mu1)
    pair = potentials_from_plan(plan, mu0, mu1)
    assert pair.phi0[0] == -math.inf and pair.xi0[0] == -0.5
    assert pair.phi1[0] == math.inf and pair.xi1[0] == 0.5
    assert math.isclose(pair.duality_value(mu0, mu1), 1.25)


@pytest.mark.parametrize("seed", range(8))
def test_duality_closure_and_complementarity(seed):
    mu0, mu1 = random_pair(np.random.default_rng(seed), max_atoms=5, box=1.8)
    hk2, plan, _ = solve_let(mu0, mu1)
    pair = potentials_from_plan(plan, mu0, mu1)
    assert abs(pair.duality_value(mu0, mu1) - hk2 / 2) <= 1e-7
    assert pair.constraint_violation() <= 1e-7
    c2 = np.cos(np.minimum(pairwise_distances(mu0.positions, mu1.positions), math.pi / 2)) ** 2
    for i, j, w in plan.entries:
        if w > 1e-12:
            assert abs(plan.sigma0[i] * plan.sigma1[j] - c2[i, j]) <= 1e-7


def test_uncertified_plan_is_rejected():
    mu = DiscreteMeasure.dirac([0.0])
    _, plan, _ = solve_let(mu, mu)
    from dataclasses import replace

    bad = replace(plan, certificate=OptimalityCertificate(1.0, 0.0, 0.0))
    with pytest.raises(NotOptimal):
        potentials_from_plan(bad, mu, mu)


def _brute_transform(points, vals, query, sign):
    out = []
    for y in query:
        best = math.inf if sign > 0 else -math.inf
        for x, v in zip(points, vals):
            r = abs(y - x)
            if r < math.pi / 2:
                cand = v + sign * (-math.log(math.cos(r)))
                best = min(best, cand) if sign > 0 else max(best, cand)
        out.append(best)
    return np.array(out)


def test_transforms_match_brute_force_loops(rng):
    pts = rng.uniform(-2, 2, 7)
    vals = rng.normal(size=7)
    vals[2] = math.inf
    query = rng.uniform(-4, 4, 20)
    assert np.allclose(forward_L_transform(pts, vals, query), _brute_transform(pts, vals, query, +1))
    vals[2] = -math.inf
    assert np.allclose(backward_L_transform(pts, vals, query), _brute_transform(pts, vals, query, -1))


def test_isolated_queries_get_infinities():
    assert forward_L_transform([0.0], [1.0], [3.0])[0] == math.inf
    assert backward_L_transform([0.0], [1.0], [3.0])[0] == -math.inf


def test_triple_transform_is_idempotent(rng):
    for _ in range(5):
        pts = rng.uniform(-2, 2, 8)
        phi0 = rng.normal(size=8)
        phi0[rng.integers(8)] = math.inf
        phi1 = forward_L_transform(pts, phi0, pts)
        phi0_hat = backward_L_transform(pts, phi1, pts)
        again = forward_L_transform(pts, phi0_hat, pts)
        same = np.isinf(again) & np.isinf(phi1) & (np.sign(again) == np.sign(phi1))
        assert np.all(same | (np.abs(again - phi1) <= 1e-12))


def test_transformed_pair_is_tight():
    mu0 = DiscreteMeasure.dirac([0.0])
    mu1 = DiscreteMeasure.dirac([math.pi / 3])
    _, plan, _ = solve_let(mu0, mu1)
    pair = potentials_from_plan(plan, mu0, mu1)
    ok, gap = check_tightness(pair, set0=pair.points0, set1=pair.points1)
    assert ok and gap <= 1e-7
    # on the union of supports the raw pair is not tight: phi0 is +inf at z1
    ok_all, gap_all = check_tightness(pair)
    assert not ok_all and gap_all == math.inf


def test_monge_map_from_smooth_potential():
    xi = GridFunction.from_function(lambda x: 0.2 * x[:, 0], [[-1.0, 1.0]], [0.01])
    pair = monge_map_from_potential(xi)
    T, q = pair.evaluate([[0.0]])
    assert np.allclose(T, [[math.atan(0.2)]])
    assert math.isclose(q[0], math.sqrt(1 + 0.04), rel_tol=1e-9)


def test_monge_map_realises_two_dirac_distance():
    # xi0 at z0 with its gradient from the closed-form optimal transport direction
    rho = 0.8
    s0 = math.cos(rho)  # equal unit masses
    v = (s0 - 1) / 2
    g = math.tan(rho) * (1 + 2 * v)
    pair = monge_map_from_potential((lambda x: np.full(len(x), v), lambda x: np.full((len(x), 1), g)))
    mu0 = DiscreteMeasure.dirac([0.0])
    mu1 = dilation_transport_apply(pair, mu0)
    assert np.allclose(mu1.positions, [[rho]])
    assert math.isclose(mu1.total_mass(), 1.0, rel_tol=1e-12)
    assert math.isclose(monge_cost(pair, mu0), 2 - 2 * math.cos(rho), rel_tol=1e-12)


def test_monge_map_vertex_region():
    pair = (lambda x: np.full(len(x), -0.6), lambda x: np.zeros((len(x), 1)))
    with pytest.raises(VertexRegion):
        monge_map_from_potential(pair, query=[[0.0]])
