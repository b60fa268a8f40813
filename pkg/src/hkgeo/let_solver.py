"""Logarithmic entropy-transport (LET) solver for discrete measures.

The squared HK distance between ``mu0`` and ``mu1`` is the minimum over
nonnegative plans ``eta`` of

    sum_i m0_i F(a_i / m0_i) + sum_j m1_j F(b_j / m1_j) + sum_ij eta_ij l(|x_i - y_j|)

with ``F(s) = s log s - s + 1``, marginals ``a, b`` of ``eta`` and the cost
``l(r) = -log cos^2 r`` for ``r < pi/2`` (``+inf`` beyond).  Its dual is

    max  sum m0 (1 - s0) + sum m1 (1 - s1)   s.t.  s0_i s1_j >= cos^2_{pi/2}|x_i - y_j|,

which is what the optimality certificate checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cone_geometry import ConePoint
from .errors import IndexOutOfRange, NoConvergence, NotOptimal, TooLarge
from .measures import DiscreteMeasure, _check_dims, pairwise_distances, rescale_to_canonical

HALF_PI = 0.5 * np.pi

__all__ = [
    "SolverOptions",
    "TransportPlan",
    "OptimalityCertificate",
    "let_objective",
    "solve_let",
    "brute_force_let",
    "lift_plan_to_cone",
    "hk_distance",
    "hk_squared",
    "entropy_F",
]


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the scaling-plus-polish solver.

    ``tolerance`` bounds the reported duality gap and the complementarity and
    feasibility violations; a run that cannot meet it raises ``NoConvergence``.
    """

    tolerance: float = 1e-6
    eps_start: float = 1.0
    eps_end: float = 1e-4
    eps_factor: float = 0.5
    inner_iterations: int = 200
    polish_tolerance: float = 1e-15
    max_polish_sweeps: int = 200_000
    seed: int = 0


@dataclass(frozen=True)
class OptimalityCertificate:
    max_complementarity_violation: float
    max_feasibility_violation: float
    duality_gap: float
    primal_value: float = math.nan
    dual_value: float = math.nan

    def worst(self) -> float:
        return max(self.max_complementarity_violation, self.max_feasibility_violation, self.duality_gap)

    def passes(self, tolerance: float) -> bool:
        return self.worst() <= tolerance


@dataclass(frozen=True)
class TransportPlan:
    """Sparse plan: entries ``(rows[k], cols[k], weights[k])`` plus the marginal
    densities ``sigma0 = a / m0`` and ``sigma1 = b / m1``."""

    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray
    certificate: OptimalityCertificate | None = field(default=None, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.sigma0.shape[0], self.sigma1.shape[0]

    @property
    def entries(self):
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.weights.tolist()))

    def dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        np.add.at(out, (self.rows, self.cols), self.weights)
        return out

    @classmethod
    def from_dense(cls, eta, mu0: DiscreteMeasure, mu1: DiscreteMeasure, certificate=None) -> "TransportPlan":
        eta = np.asarray(eta, dtype=float)
        rows, cols = np.nonzero(eta > 0)
        a = eta.sum(axis=1)
        b = eta.sum(axis=0)
        return cls(rows, cols, eta[rows, cols], a / mu0.masses, b / mu1.masses, certificate)

    @classmethod
    def from_entries(cls, entries, mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> "TransportPlan":
        eta = np.zeros((mu0.n_atoms, mu1.n_atoms))
        for i, j, w in entries:
            if not (0 <= i < mu0.n_atoms and 0 <= j < mu1.n_atoms):
                raise IndexOutOfRange(f"plan entry ({i}, {j}) out of range")
            eta[i, j] += w
        return cls.from_dense(eta, mu0, mu1)


def entropy_F(s):
    """``F(s) = s log s - s + 1`` with ``F(0) = 1``."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(s > 0, s * np.log(np.where(s > 0, s, 1.0)) - s + 1.0, 1.0)
    return val


def _cos2(dist: np.ndarray) -> np.ndarray:
    return np.where(dist < HALF_PI, np.cos(np.minimum(dist, HALF_PI)) ** 2, 0.0)


def _objective_dense(eta, m0, m1, c) -> float:
    a = eta.sum(axis=1)
    b = eta.sum(axis=0)
    if np.any((eta > 0) & (c <= 0)):
        return math.inf
    with np.errstate(divide="ignore"):
        cost = np.where(eta > 0, -np.log(np.where(c > 0, c, 1.0)), 0.0)
    return float(
        np.sum(m0 * entropy_F(a / m0)) + np.sum(m1 * entropy_F(b / m1)) + np.sum(eta * cost)
    )


def let_objective(plan: TransportPlan | list, mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> float:
    """Entropy-transport functional of a plan (``+inf`` across the pi/2 barrier)."""
    _check_dims(mu0, mu1)
    if isinstance(plan, TransportPlan):
        n0, n1 = plan.shape
        if n0 != mu0.n_atoms or n1 != mu1.n_atoms:
            raise IndexOutOfRange("plan shape does not match the measures")
        entries = plan.entries
    else:
        entries = list(plan)
    eta = np.zeros((mu0.n_atoms, mu1.n_atoms))
    for i, j, w in entries:
        if not (0 <= i < mu0.n_atoms and 0 <= j < mu1.n_atoms):
            raise IndexOutOfRange(f"plan entry ({i}, {j}) out of range")
        eta[i, j] += w
    c = _cos2(pairwise_distances(mu0.positions, mu1.positions))
    return _objective_dense(eta, mu0.masses, mu1.masses, c)


# ---------------------------------------------------------------------------
# numerical core


def _lse_rows(z: np.ndarray, inv_eps: float) -> np.ndarray:
    """Row-wise ``log sum exp(z / eps)``; every row has a finite entry."""
    top = np.max(z, axis=1)
    return inv_eps * top + np.log(np.sum(np.exp((z - top[:, None]) * inv_eps), axis=1))


def _sinkhorn(m0, m1, c, opts: SolverOptions) -> np.ndarray:
    """Entropic scaling iterations with geometric annealing of the
    regularisation; returns a plan close to the LET optimum."""
    with np.errstate(divide="ignore"):
        neg_cost = np.log(c)  # -inf where the cost is infinite
    log_m0 = np.log(m0)
    log_m1 = np.log(m1)
    f = np.zeros_like(m0)
    g = np.zeros_like(m1)
    neg_cost_t = np.ascontiguousarray(neg_cost.T)
    eps = opts.eps_start
    while True:
        scale = eps / (1.0 + eps)
        inv = 1.0 / eps
        for _ in range(opts.inner_iterations):
            f_new = -scale * _lse_rows((g + log_m1 * eps)[None, :] + neg_cost, inv)
            g_new = -scale * _lse_rows((f_new + log_m0 * eps)[None, :] + neg_cost_t, inv)
            change = max(np.max(np.abs(f_new - f)), np.max(np.abs(g_new - g)))
            f, g = f_new, g_new
            if change <= 1e-14:
                break
        if eps <= opts.eps_end:
            break
        eps = max(eps * opts.eps_factor, opts.eps_end)
    return np.exp(log_m0[:, None] + log_m1[None, :] + (f[:, None] + g[None, :] + neg_cost) / eps)


def _coordinate_descent(eta, m0, m1, c, tol, max_sweeps, rng=None):
    """Exact coordinate minimisation over the plan weights of admissible pairs.

    For a single weight ``w`` with the other weights fixed, the optimality
    condition is ``(a_rest + w)(b_rest + w) = m0 m1 c``; the update takes the
    nonnegative root (or zero).  Returns the plan and the number of sweeps.
    """
    n0, n1 = c.shape
    pairs = [(i, j) for i in range(n0) for j in range(n1) if c[i, j] > 0]
    if not pairs:
        return np.zeros((n0, n1)), 0
    w = {p: float(eta[p]) for p in pairs}
    a = [0.0] * n0
    b = [0.0] * n1
    for (i, j), v in w.items():
        a[i] += v
        b[j] += v
    target = {(i, j): float(m0[i] * m1[j] * c[i, j]) for (i, j) in pairs}
    order = list(pairs)
    scale = float(np.sum(m0) + np.sum(m1))
    sqrt = math.sqrt
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        if rng is not None:
            rng.shuffle(order)
        biggest = 0.0
        for p in order:
            i, j = p
            old = w[p]
            ar = a[i] - old
            br = b[j] - old
            if ar < 0.0:
                ar = 0.0
            if br < 0.0:
                br = 0.0
            P = target[p]
            s = ar + br
            root = sqrt((ar - br) * (ar - br) + 4.0 * P)
            if s > 0.0:
                new = 2.0 * (P - ar * br) / (s + root)
            else:
                new = 0.5 * (root - s)
            if new < 0.0:
                new = 0.0
            delta = new - old
            if delta != 0.0:
                w[p] = new
                a[i] = ar + new
                b[j] = br + new
                ad = abs(delta)
                if ad > biggest:
                    biggest = ad
        if sweeps % 64 == 0:
            # refresh marginals to stop drift from incremental updates
            a = [0.0] * n0
            b = [0.0] * n1
            for (i, j), v in w.items():
                a[i] += v
                b[j] += v
        if biggest <= tol * scale:
            break
    out = np.zeros((n0, n1))
    for (i, j), v in w.items():
        out[i, j] = v
    return out, sweeps


def _certificate(eta, m0, m1, c) -> OptimalityCertificate:
    a = eta.sum(axis=1)
    b = eta.sum(axis=0)
    s0 = a / m0
    s1 = b / m1
    near = c > 0
    primal = _objective_dense(eta, m0, m1, c)
    prod = s0[:, None] * s1[None, :]
    feas = float(np.max(np.where(near, np.maximum(c - prod, 0.0), 0.0), initial=0.0))
    comp = float(np.max(np.where(eta > 0, np.abs(prod - c), 0.0), initial=0.0))
    dual = _dual_value(m0, m1, c, s0, s1)
    gap = max(primal - dual, 0.0) if math.isfinite(primal) else math.inf
    return OptimalityCertificate(comp, feas, gap, primal, dual)


def _dual_value(m0, m1, c, s0, s1) -> float:
    """Best dual objective reachable by repairing feasibility of ``(s0, s1)`` on one side."""
    total = float(np.sum(m0) + np.sum(m1))
    best = -math.inf
    tiny = 1e-300
    for side in (0, 1):
        if side == 0:
            t1 = np.maximum(s1, tiny)
            t0 = np.maximum(s0, np.max(c / t1[None, :], axis=1, initial=0.0))
        else:
            t0 = np.maximum(s0, tiny)
            t1 = np.maximum(s1, np.max(c / t0[:, None], axis=0, initial=0.0))
        best = max(best, total - float(np.sum(m0 * t0) + np.sum(m1 * t1)))
    return best


def _solve_arrays(m0, m1, c, opts: SolverOptions, warm=True):
    n0, n1 = c.shape
    if n0 == 0 or n1 == 0:
        return np.zeros((n0, n1)), 0
    near0 = np.any(c > 0, axis=1)
    near1 = np.any(c > 0, axis=0)
    eta = np.zeros((n0, n1))
    if not (near0.any() and near1.any()):
        return eta, 0
    sub = np.ix_(near0, near1)
    cs = c[sub]
    start = _sinkhorn(m0[near0], m1[near1], cs, opts) if warm else np.zeros(cs.shape)
    rng = np.random.default_rng(opts.seed)
    pol, sweeps = _coordinate_descent(
        start, m0[near0], m1[near1], cs, opts.polish_tolerance, opts.max_polish_sweeps, rng
    )
    eta[sub] = pol
    return eta, sweeps


def solve_let(mu0: DiscreteMeasure, mu1: DiscreteMeasure, options: SolverOptions | None = None):
    """Minimise the LET functional.

    Returns ``(hk_squared, plan, certificate)``.  Raises ``NoConvergence`` when
    the certificate misses ``options.tolerance``.
    """
    opts = options or SolverOptions()
    _check_dims(mu0, mu1)
    m0, m1 = np.asarray(mu0.masses), np.asarray(mu1.masses)
    if mu0.is_empty() or mu1.is_empty():
        plan = TransportPlan(
            np.zeros(0, int), np.zeros(0, int), np.zeros(0), np.zeros(mu0.n_atoms), np.zeros(mu1.n_atoms)
        )
        cert = OptimalityCertificate(0.0, 0.0, 0.0, mu0.total_mass() + mu1.total_mass(), mu0.total_mass() + mu1.total_mass())
        return mu0.total_mass() + mu1.total_mass(), replace(plan, certificate=cert), cert
    c = _cos2(pairwise_distances(mu0.positions, mu1.positions))
    eta, sweeps = _solve_arrays(m0, m1, c, opts)
    cert = _certificate(eta, m0, m1, c)
    if not cert.passes(opts.tolerance):
        raise NoConvergence(sweeps, cert.worst())
    plan = TransportPlan.from_dense(eta, mu0, mu1, cert)
    return cert.primal_value, plan, cert


def brute_force_let(mu0: DiscreteMeasure, mu1: DiscreteMeasure, resolution: float = 1e-15,
                    max_sweeps: int = 2_000_000) -> float:
    """Reference minimiser for tiny instances (at most 4 atoms per side).

    Starts from the empty plan and cycles exact one-dimensional minimisations
    over the plan weights until no weight moves by more than ``resolution``
    times the total mass.
    """
    _check_dims(mu0, mu1)
    if mu0.n_atoms > 4 or mu1.n_atoms > 4:
        raise TooLarge("brute_force_let accepts at most 4 atoms per side")
    if mu0.is_empty() or mu1.is_empty():
        return mu0.total_mass() + mu1.total_mass()
    c = _cos2(pairwise_distances(mu0.positions, mu1.positions))
    eta, _ = _coordinate_descent(np.zeros(c.shape), mu0.masses, mu1.masses, c, resolution, max_sweeps)
    return _objective_dense(eta, mu0.masses, mu1.masses, c)


def lift_plan_to_cone(plan: TransportPlan, mu0: DiscreteMeasure, mu1: DiscreteMeasure,
                      tolerance: float = 1e-6):
    """Lift an optimal plan to weighted pairs of cone points.

    Matched mass lifts to ``([x0, sigma0^-1/2], [x1, sigma1^-1/2], w)``; any
    unmatched mass is paired with the vertex.
    """
    if plan.certificate is not None and not plan.certificate.passes(tolerance):
        raise NotOptimal(f"certificate violation {plan.certificate.worst():.3e} exceeds {tolerance:.1e}")
    d = mu0.dimension
    vertex = ConePoint.vertex(d)
    pairs = []
    matched0 = np.zeros(mu0.n_atoms)
    matched1 = np.zeros(mu1.n_atoms)
    for i, j, w in plan.entries:
        s0, s1 = plan.sigma0[i], plan.sigma1[j]
        pairs.append((ConePoint(mu0.positions[i], 1.0 / math.sqrt(s0)),
                      ConePoint(mu1.positions[j], 1.0 / math.sqrt(s1)), w))
        matched0[i] += w / s0
        matched1[j] += w / s1
    floor0 = 1e-14 * max(mu0.total_mass(), 1e-300)
    floor1 = 1e-14 * max(mu1.total_mass(), 1e-300)
    for i in range(mu0.n_atoms):
        rest = mu0.masses[i] - matched0[i]
        if rest > floor0:
            pairs.append((ConePoint(mu0.positions[i], 1.0), vertex, float(rest)))
    for j in range(mu1.n_atoms):
        rest = mu1.masses[j] - matched1[j]
        if rest > floor1:
            pairs.append((vertex, ConePoint(mu1.positions[j], 1.0), float(rest)))
    return pairs


def hk_squared(mu0: DiscreteMeasure, mu1: DiscreteMeasure, alpha: float = 1.0, beta: float = 4.0,
               options: SolverOptions | None = None) -> float:
    c0, factor = rescale_to_canonical(alpha, beta, mu0)
    c1, _ = rescale_to_canonical(alpha, beta, mu1)
    value, _, _ = solve_let(c0, c1, options)
    return factor * value


def hk_distance(mu0: DiscreteMeasure, mu1: DiscreteMeasure, alpha: float = 1.0, beta: float = 4.0,
                options: SolverOptions | None = None) -> float:
    """HK_{alpha,beta} distance; the default parameters give the canonical distance."""
    return math.sqrt(max(hk_squared(mu0, mu1, alpha, beta, options), 0.0))
