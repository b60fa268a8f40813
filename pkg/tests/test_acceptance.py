"""Acceptance checks, one per criterion; each prints a PASS or FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the lines inline; the
terminal summary repeats them either way.
"""

import math
import time

import numpy as np
import pytest

from conftest import random_pair
from hkgeo import DiscreteMeasure
from hkgeo.cone_geometry import ConePoint, cone_geodesic
from hkgeo.convexity import (
    boltzmann,
    certify,
    empirical_geodesic_convexity,
    lambda_opt,
    negative_power,
    power,
    sum_of,
)
from hkgeo.dual_potentials import potentials_from_plan
from hkgeo.geodesics import FlowContext, build_geodesic, check_density_convexity, linf_convexity_check, mass_profile, sample
from hkgeo.hopf_lax import (
    GridFunction,
    PointPotential,
    SmoothPotentialFlow,
    characteristic_flow,
    contact_set,
    curvature_diagnostics,
    curvature_ratios,
    default_contact_tolerance,
    hopf_lax_backward,
    hopf_lax_forward,
    semigroup_residual,
)
from hkgeo.let_solver import brute_force_let, hk_distance, solve_let
from hkgeo.measures import GridDensity, pairwise_distances

RESULTS: list[str] = []


def record(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def oracle_instances():
    rng = np.random.default_rng(314)
    return [random_pair(rng, max_atoms=4, dimension=2, box=1.0) for _ in range(50)]


@pytest.fixture(scope="module")
def geodesics():
    rng = np.random.default_rng(2718)
    return [build_geodesic(*random_pair(rng, max_atoms=4, dimension=2, box=1.5)) for _ in range(20)]


def test_criterion_01_two_dirac_closed_form():
    worst_err, worst_time = 0.0, 0.0
    for rho in (0.3, 0.9, math.pi / 3, 1.5):
        start = time.perf_counter()
        hk2, _, _ = solve_let(DiscreteMeasure.dirac([0.0, 0.0]), DiscreteMeasure.dirac([rho, 0.0]))
        worst_time = max(worst_time, time.perf_counter() - start)
        worst_err = max(worst_err, abs(hk2 - (2 - 2 * math.cos(rho))))
    record(1, worst_err <= 1e-6 and worst_time < 1.0, f"max error {worst_err:.2e}, slowest solve {worst_time:.3f}s")


def test_criterion_02_far_mass():
    mu0 = DiscreteMeasure([[0.0, 0.0], [0.2, 0.1]], [1.3, 0.4])
    mu1 = DiscreteMeasure([[2.0, 0.5], [1.9, -0.4]], [0.7, 2.1])
    err = abs(solve_let(mu0, mu1)[0] - (mu0.total_mass() + mu1.total_mass()))
    record(2, err <= 1e-8, f"error {err:.2e}")


def test_criterion_03_oracle_equivalence(oracle_instances):
    start = time.perf_counter()
    worst = max(abs(solve_let(a, b)[0] - brute_force_let(a, b)) for a, b in oracle_instances)
    elapsed = time.perf_counter() - start
    record(3, worst <= 1e-6 and elapsed < 30.0, f"max |solve - brute force| {worst:.2e} over 50 instances in {elapsed:.1f}s")


def test_criterion_04_duality_closure(oracle_instances):
    gap, compl = 0.0, 0.0
    for mu0, mu1 in oracle_instances:
        hk2, plan, _ = solve_let(mu0, mu1)
        pair = potentials_from_plan(plan, mu0, mu1)
        gap = max(gap, abs(pair.duality_value(mu0, mu1) - hk2 / 2))
        c2 = np.cos(np.minimum(pairwise_distances(mu0.positions, mu1.positions), math.pi / 2)) ** 2
        for i, j, w in plan.entries:
            if w > 0:
                compl = max(compl, abs(plan.sigma0[i] * plan.sigma1[j] - c2[i, j]))
    record(4, gap <= 1e-6 and compl <= 1e-6, f"max duality gap {gap:.2e}, max complementarity defect {compl:.2e}")


def test_criterion_05_mass_quadratic(geodesics):
    times = np.linspace(0, 1, 11)
    resid, coeff_err = 0.0, 0.0
    for curve in geodesics:
        m = mass_profile(curve, times)
        fit = np.polyfit(times, m, 2)
        resid = max(resid, float(np.max(np.abs(np.polyval(fit, times) - m))))
        # the t^2 coefficient of m0 (1-t) + m1 t - K t (1-t) is +K
        coeff_err = max(coeff_err, abs(fit[0] - curve.hk_squared))
    record(5, resid <= 1e-8 and coeff_err <= 1e-6, f"max fit residual {resid:.2e}, max curvature error {coeff_err:.2e}")


def test_criterion_06_constant_speed(geodesics):
    rng = np.random.default_rng(99)
    worst = 0.0
    for curve in geodesics:
        hk = math.sqrt(curve.hk_squared)
        for s, t in rng.uniform(0, 1, (5, 2)):
            worst = max(worst, abs(hk_distance(sample(curve, s), sample(curve, t)) - abs(t - s) * hk))
    record(6, worst <= 1e-5, f"max speed defect {worst:.2e} over 100 pairs")


def test_criterion_07_hopf_lax_closed_forms():
    const_err = 0.0
    for a in (-0.4, -0.1, 0.0, 0.5, 2.0):
        for t in (0.1, 0.5, 1.0):
            out = hopf_lax_forward(GridFunction([[0.0, 1.0]], [0.1], np.full(11, a)), t).values
            const_err = max(const_err, float(np.max(np.abs(out - a / (1 + 2 * a * t)))))

    query = GridFunction([[-3.0, 6.0]], [9.0 / 2000], np.zeros(2001))
    x = query.nodes()[:, 0]
    dirac_err = 0.0
    for rho in (0.3, 0.9, 1.3):
        s = math.cos(rho)
        src0 = PointPotential([[0.0]], [(s - 1) / 2])
        src1 = PointPotential([[rho]], [(1 - s) / 2])
        c0 = np.cos(np.minimum(np.abs(x), math.pi / 2)) ** 2
        c1 = np.cos(np.minimum(np.abs(x - rho), math.pi / 2)) ** 2
        for t in (0.2, 0.5, 0.8):
            fwd = (1 - t + t * s - c0) / (2 * t * (1 - t + t * s))
            bwd = (c1 - t - (1 - t) * s) / (2 * (1 - t) * (t + (1 - t) * s))
            dirac_err = max(dirac_err, float(np.max(np.abs(hopf_lax_forward(src0, t, query=query).values - fwd))))
            dirac_err = max(dirac_err, float(np.max(np.abs(hopf_lax_backward(src1, t, query=query).values - bwd))))

    residuals = []
    for h in (0.04, 0.02, 0.01):
        xi = GridFunction.from_function(lambda p: 0.5 * p[:, 0] ** 2, [[-2.0, 2.0]], [h])
        residuals.append(semigroup_residual(xi, 0.3, 0.8))
    halves = all(residuals[k + 1] <= 0.5 * residuals[k] for k in range(len(residuals) - 1))
    ok = const_err <= 1e-12 and dirac_err <= 1e-10 and halves
    table = ", ".join(f"{r:.1e}" for r in residuals)
    record(7, ok, f"constant {const_err:.1e}, two-Dirac {dirac_err:.1e}, semigroup at h=.04/.02/.01: {table}")


def _dirac_grid(z, value, fill, h):
    xs = -3.0 + h * np.arange(int(round(9.0 / h)) + 1)
    vals = np.full(xs.shape, fill)
    vals[np.argmin(np.abs(xs - z))] = value
    return GridFunction([[-3.0, 6.0]], [h], vals)


def _quarter_turn_pair(h):
    n = int(round(math.pi / 2 / h))
    h = math.pi / 2 / n
    vals0, vals1 = np.full(1801, np.inf), np.full(1801, -np.inf)
    vals0[600], vals1[600 + n] = -0.5, 0.5
    box = [[-600 * h, 1200 * h]]
    return GridFunction(box, [h], vals0), GridFunction(box, [h], vals1)


def test_criterion_08_contact_sets():
    h = 0.005
    times = np.linspace(0.1, 0.9, 17)

    # rho = 0.9: at most two nodes per time, each within h of the geodesic point
    rho = 0.9
    c = math.cos(rho)
    xi0, xibar1 = _dirac_grid(0.0, (c - 1) / 2, np.inf, h), _dirac_grid(rho, (1 - c) / 2, -np.inf, h)
    track_ok, prev = True, 0.0
    for t in times:
        tol = default_contact_tolerance(t, xi0.spacing, lower=(c - 1) / 2, upper=(1 - c) / 2)
        cs = contact_set(hopf_lax_forward(xi0, t), hopf_lax_backward(xibar1, t), tol, t=t)
        pos = xi0.nodes()[cs.indices()[:, 0], 0]
        z_t = cone_geodesic(ConePoint([0.0], 1.0), ConePoint([rho], 1.0), t).position[0]
        track_ok &= 1 <= pos.size <= 2 and bool(np.all(np.abs(pos - z_t) <= h))
        track_ok &= abs(float(np.mean(pos)) - prev) <= 0.1
        prev = float(np.mean(pos)) if pos.size else prev

    # rho = pi/2 on the lattice that has both points as nodes
    q0, q1 = _quarter_turn_pair(h)
    x = q0.nodes()[:, 0]
    inside = (x >= -1e-12) & (x <= math.pi / 2 + 1e-12)
    coverage = min(
        float(np.mean(contact_set(hopf_lax_forward(q0, t), hopf_lax_backward(q1, t),
                                  default_contact_tolerance(t, q0.spacing), t=t).mask[inside]))
        for t in (0.25, 0.5, 0.75)
    )

    # rho = 2.5: only the endpoints
    f0, f1 = _dirac_grid(0.0, -0.5, np.inf, h), _dirac_grid(2.5, 0.5, -np.inf, h)
    ends_ok = True
    for t in (0.25, 0.5, 0.75):
        cs = contact_set(hopf_lax_forward(f0, t), hopf_lax_backward(f1, t), default_contact_tolerance(t, f0.spacing), t=t)
        ends_ok &= np.allclose(np.sort(f0.nodes()[cs.indices()[:, 0], 0]), [0.0, 2.5], atol=1e-9)
    record(8, track_ok and coverage >= 0.95 and ends_ok,
           f"rho=0.9 tracks z(t): {track_ok}; rho=pi/2 coverage {coverage:.1%}; rho=2.5 endpoints only: {ends_ok}")


def test_criterion_09_characteristic_residuals():
    flows = [
        SmoothPotentialFlow.constant(0.3, 0.0, 1),
        SmoothPotentialFlow.quadratic(0.1, [0.4], [[0.0]], 0.0),
        SmoothPotentialFlow.quadratic(0.05, [0.2], [[0.6]], 0.0),
        SmoothPotentialFlow.constant(-0.2, 0.0, 2),
        SmoothPotentialFlow.quadratic(0.0, [0.3, -0.1], [[0.0, 0.0], [0.0, 0.0]], 0.0),
        SmoothPotentialFlow.quadratic(0.1, [0.2, 0.1], [[0.5, 0.1], [0.1, 0.3]], 0.0),
    ]
    closed = max(
        max(characteristic_flow(f, 0.0, np.full(f.dimension, 0.1), 0.6, dt=1e-3).residuals.values()) for f in flows
    )
    # grid potential: endpoint error against the analytic flow shrinks with h,
    # the finite-difference residual of the identities shrinks with dt
    f = lambda p: 0.2 * np.sin(1.3 * p[:, 0]) + 0.1 * p[:, 0] ** 2  # noqa: E731
    exact = SmoothPotentialFlow(
        f,
        lambda p: (0.26 * np.cos(1.3 * p[:, 0]) + 0.2 * p[:, 0])[:, None],
        lambda p: (-0.338 * np.sin(1.3 * p[:, 0]) + 0.2)[:, None, None],
        0.0,
        1,
    )
    target = 0.1 + exact.maps(np.array([[0.1]]), 0.4)["displacement"][0, 0]
    spacings, dts = (0.08, 0.04, 0.02, 0.01), (4e-3, 2e-3, 1e-3)
    grid_err = []
    for h in spacings:
        flow = SmoothPotentialFlow.from_grid(GridFunction.from_function(f, [[-2, 2]], [h]), 0.0)
        grid_err.append(abs(characteristic_flow(flow, 0.0, [0.1], 0.4, dt=1e-3).T[-1, 0] - target))
    dt_res = [max(characteristic_flow(exact, 0.0, [0.1], 0.4, dt=dt).residuals.values()) for dt in dts]
    converges = all(b <= 0.5 * a for a, b in zip(grid_err, grid_err[1:])) and all(
        b <= 0.5 * a for a, b in zip(dt_res, dt_res[1:]))
    rows = ", ".join(f"h={h}: {e:.1e}" for h, e in zip(spacings, grid_err))
    rows_dt = ", ".join(f"dt={dt:g}: {r:.1e}" for dt, r in zip(dts, dt_res))
    record(9, closed <= 1e-6 and converges,
           f"closed-form max residual {closed:.1e}; map error {rows}; residual {rows_dt}")


def test_criterion_10_curvature():
    rng = np.random.default_rng(7)
    all_ok = True
    for _ in range(20):
        b = rng.uniform(-0.5, 0.5, 2)
        a = rng.uniform(-0.3, 0.3, (2, 2))
        flow = SmoothPotentialFlow.quadratic(rng.uniform(-0.2, 0.3), b, (a + a.T) / 2, 0.0)
        all_ok &= curvature_diagnostics(characteristic_flow(flow, 0.0, [0.0, 0.0], 0.3, dt=2e-3)).ok

    report = curvature_diagnostics(characteristic_flow(SmoothPotentialFlow.quadratic(0.1, [0.5], [[0.0]], 0.0),
                                                       0.0, [0.0], 0.8))
    eq_err = float(np.max(np.abs(report.rho_ratio + 3 * report.gamma_ratio)))
    all_ok &= report.ok

    alpha = 0.7
    saddle = SmoothPotentialFlow.quadratic(0.0, [0.0, 0.0], [[2 * alpha, 0.0], [0.0, -2 * alpha]], 0.0)
    traj = characteristic_flow(saddle, 0.0, [0.0, 0.0], 0.2, dt=1e-3)
    all_ok &= curvature_diagnostics(traj).ok
    _, r = curvature_ratios(traj.grad[0], traj.hess[0])
    saddle_err = abs(float(r[0]) + 8 * alpha**2 / 2)
    record(10, all_ok and eq_err <= 1e-8 and saddle_err <= 1e-6,
           f"inequalities hold on 22 trajectories: {all_ok}; d=1 equality {eq_err:.1e}; saddle {saddle_err:.1e}")


def _flow_suite(h=0.02):
    xi = GridFunction.from_function(lambda p: 0.3 * np.sin(1.3 * p[:, 0]) + 0.1 * p[:, 0] ** 2, [[-2, 2]], [h])
    yield FlowContext(xi, GridDensity([[-2, 2]], [h], np.exp(-xi.nodes()[:, 0] ** 2)), 0.4)
    for alpha, beta in ((-0.3, -0.3), (-0.3, 0.3), (0.1, 0.2)):
        q = GridFunction.from_function(lambda p: alpha + beta * p[:, 0] ** 2, [[-0.5, 0.5]], [h])
        yield FlowContext(q, GridDensity([[-0.5, 0.5]], [h], np.ones(q.shape[0])), 0.5)


def test_criterion_11_density_convexity():
    times = np.linspace(0, 1, 21)
    worst, linf_bad = math.inf, []
    for ctx in _flow_suite():
        h = float(ctx.xi_s.spacing[0])
        for idx in np.flatnonzero(ctx.active()):
            _, profile = check_density_convexity(ctx, (int(idx),), times)
            scale = max(1.0, float(np.max(np.abs(profile.values))))
            worst = min(worst, float(np.min(profile.second_differences)) / (h * scale))
        linf_bad += linf_convexity_check(ctx, times)
    record(11, worst >= -10 and not linf_bad,
           f"min second difference {worst:.2e} h (floor -10 h); L-infinity chord excesses: {len(linf_bad)}")


def test_criterion_12_certification_table():
    mismatches = []
    for m in (0.5, 0.9, 1.0, 1.5, 2.0, 3.0):
        for d in (1, 2, 3):
            if certify(power(m), d).overall is not (m >= 1):
                mismatches.append(f"power {m} d={d}")
    for q in (0.2, 1 / 3, 0.4, 0.5, 0.6):
        if certify(negative_power(q), 1).overall is not (1 / 3 <= q <= 0.5):
            mismatches.append(f"negative_power {q:.3g} d=1")
        if certify(negative_power(q), 2).overall is not (q == 0.5):
            mismatches.append(f"negative_power {q:.3g} d=2")
    boltz = [certify(boltzmann(), d) for d in (1, 2, 3)]
    if any(r.overall or r.failing_condition != "hellinger" for r in boltz):
        mismatches.append("boltzmann")
    record(12, not mismatches, "all 34 verdicts match" if not mismatches else f"mismatches: {mismatches}")


def test_criterion_13_optimal_lambda():
    start = time.perf_counter()
    lam, c_star = lambda_opt(sum_of(power(2.0), negative_power(0.4)), 1)
    elapsed = time.perf_counter() - start
    ok = 0.62 <= lam <= 0.66 and 0.025 <= c_star <= 0.040 and elapsed < 5.0
    record(13, ok, f"lambda_opt {lam:.5f} at c* {c_star:.4f} in {elapsed:.2f}s")


def test_criterion_14_boltzmann_pure_growth():
    g = GridDensity([[0.0, 1.0]], [0.01], np.full(101, 0.01))
    violation, _ = empirical_geodesic_convexity(boltzmann(), g.with_values(np.zeros(101)), g)
    record(14, violation >= 0.1 * g.total_mass(),
           f"chord violation {violation:.4f} against 0.1 M(mu1) = {0.1 * g.total_mass():.4f}")
