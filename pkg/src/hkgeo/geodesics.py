"""HK geodesics between discrete measures and density transport along flows.

A geodesic between discrete measures is stored in Lagrangian form: the
optimal plan lifted to weighted pairs of cone points.  Sampling at time
``t`` projects the per-pair cone geodesics back to ``R^d``, so there is no
time-discretisation error.

For absolutely continuous data a :class:`FlowContext` (a potential ``xi_s``
and a density ``c_s`` on a lattice) transports densities along the
characteristic maps, ``c(t, T(x)) = c_s(x) alpha / delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cone_geometry import ConePoint, cone_geodesic, homogeneous_projection
from .errors import DegenerateJacobian, InputError, NotAPartition, UndefinedWeight
from .hopf_lax import GridFunction, characteristic_maps
from .let_solver import SolverOptions, TransportPlan, lift_plan_to_cone, solve_let
from .measures import DiscreteMeasure, GridDensity, _check_dims

HALF_PI = 0.5 * np.pi

__all__ = [
    "GeodesicCurve",
    "build_geodesic",
    "sample",
    "mass_profile",
    "restrict_geodesic",
    "split_singular",
    "FlowContext",
    "TransportedDensity",
    "DensityProfile",
    "density_along_flow",
    "check_density_convexity",
    "linf_convexity_check",
]


@dataclass(frozen=True)
class GeodesicCurve:
    """Lifted optimal pairs ``(a, b, w)`` of cone points with their HK^2."""

    pairs: tuple
    hk_squared: float
    mu0: DiscreteMeasure
    mu1: DiscreteMeasure
    plan: TransportPlan | None = field(default=None, compare=False)

    @property
    def dimension(self) -> int:
        return self.mu0.dimension

    def sample(self, t: float) -> DiscreteMeasure:
        return sample(self, t)

    def points_at(self, t: float) -> list:
        """Cone point of every pair at time ``t`` (same order as ``pairs``)."""
        return [cone_geodesic(a, b, t) for a, b, _ in self.pairs]


def _route_through_vertex(pairs, dimension):
    """Replace pairs separated by pi/2 or more by a decay and a growth branch."""
    vertex = ConePoint.vertex(dimension)
    out = []
    for a, b, w in pairs:
        if not a.is_vertex and not b.is_vertex:
            sep = float(np.linalg.norm(a.position - b.position))
            if sep >= HALF_PI:
                out.append((a, vertex, w))
                out.append((vertex, b, w))
                continue
        out.append((a, b, w))
    return out


def build_geodesic(mu0: DiscreteMeasure, mu1: DiscreteMeasure,
                   options: SolverOptions | None = None) -> GeodesicCurve:
    """Solve the LET problem and lift its plan to cone geodesics."""
    _check_dims(mu0, mu1)
    opts = options or SolverOptions()
    hk2, plan, _ = solve_let(mu0, mu1, opts)
    pairs = _route_through_vertex(lift_plan_to_cone(plan, mu0, mu1, opts.tolerance), mu0.dimension)
    return GeodesicCurve(tuple(pairs), float(hk2), mu0, mu1, plan)


def sample(curve: GeodesicCurve, t: float) -> DiscreteMeasure:
    """``mu_t``: homogeneous projection of the pairwise cone geodesics at ``t``.

    The endpoints are returned exactly (merged), not recomputed from the lift.
    """
    if not (0.0 <= t <= 1.0):
        raise InputError("t must lie in [0, 1]")
    if t == 0.0:
        return curve.mu0.merged()
    if t == 1.0:
        return curve.mu1.merged()
    lifted = [(p, w) for p, (_, _, w) in zip(curve.points_at(t), curve.pairs)]
    return homogeneous_projection(lifted, curve.dimension)


def mass_profile(curve: GeodesicCurve, times) -> np.ndarray:
    return np.array([sample(curve, float(t)).total_mass() for t in times])


def _weight_lookup(curve: GeodesicCurve, s: float, weights):
    """Per-pair weight factors from weights given on the atoms of ``mu_s``."""
    points = curve.points_at(s)
    if callable(weights):
        factors = []
        for p in points:
            if p.is_vertex:
                factors.append(0.0)
                continue
            val = float(weights(p.position))
            factors.append(val)
    else:
        mu_s = sample(curve, s)
        arr = np.asarray(weights, dtype=float).reshape(-1)
        if arr.shape[0] != mu_s.n_atoms:
            raise UndefinedWeight(f"expected {mu_s.n_atoms} weights, got {arr.shape[0]}")
        index = {tuple(x): k for k, x in enumerate(mu_s.positions)}
        factors = []
        for p in points:
            if p.is_vertex:
                factors.append(0.0)
                continue
            k = index.get(tuple(p.position))
            if k is None:
                raise UndefinedWeight("a lifted pair has no atom at time s")
            factors.append(arr[k])
    factors = np.asarray(factors, dtype=float)
    if not np.all(np.isfinite(factors)) or np.any(factors < 0):
        raise UndefinedWeight("weights must be finite and nonnegative")
    return factors


def _curve_from_pairs(pairs, dimension, hk2=None) -> GeodesicCurve:
    pairs = tuple((a, b, w) for a, b, w in pairs if w > 0)
    mu0 = homogeneous_projection([(a, w) for a, _, w in pairs], dimension)
    mu1 = homogeneous_projection([(b, w) for _, b, w in pairs], dimension)
    if hk2 is None:
        hk2 = sum(w * (a.r**2 + b.r**2 - 2 * a.r * b.r * math.cos(min(HALF_PI, float(np.linalg.norm(a.position - b.position)))))
                  if not (a.is_vertex or b.is_vertex) else w * (a.r**2 + b.r**2)
                  for a, b, w in pairs)
    return GeodesicCurve(pairs, float(hk2), mu0, mu1)


def restrict_geodesic(curve: GeodesicCurve, s: float, weights) -> GeodesicCurve:
    """Reweight the geodesic by a density ``weights`` defined on ``mu_s``.

    ``weights`` is either a callable on positions or an array aligned with the
    atoms of ``sample(curve, s)``.  Each lifted pair is scaled by the weight
    at its time-``s`` position.
    """
    if not (0.0 < s < 1.0):
        raise InputError("s must lie in (0, 1)")
    factors = _weight_lookup(curve, s, weights)
    pairs = [(a, b, w * f) for (a, b, w), f in zip(curve.pairs, factors)]
    return _curve_from_pairs(pairs, curve.dimension)


def split_singular(curve: GeodesicCurve, s: float, part_a, part_b):
    """Split the geodesic by a partition of the atoms of ``mu_s`` into two
    geodesics whose samples add up to the original."""
    mu_s = sample(curve, s)
    a = set(int(i) for i in part_a)
    b = set(int(i) for i in part_b)
    if a & b or (a | b) != set(range(mu_s.n_atoms)):
        raise NotAPartition("index sets must partition the atoms of mu_s")
    ind_a = np.zeros(mu_s.n_atoms)
    ind_a[list(a)] = 1.0
    return (restrict_geodesic(curve, s, ind_a), restrict_geodesic(curve, s, 1.0 - ind_a))


# ---------------------------------------------------------------------------
# densities along flows


@dataclass(frozen=True)
class FlowContext:
    """Potential ``xi_s`` and density ``c_s`` on one lattice at time ``s``.

    ``support`` optionally restricts the transported nodes (for instance to a
    computed contact set); by default all nodes with ``c_s > 0`` are used.
    """

    xi_s: GridFunction
    density: GridDensity
    s: float
    support: np.ndarray | None = None

    def __post_init__(self):
        if self.xi_s.shape != self.density.shape or not np.allclose(self.xi_s.box, self.density.box):
            raise InputError("potential and density must share a lattice")
        if not (0.0 <= self.s <= 1.0):
            raise InputError("s must lie in [0, 1]")

    def active(self) -> np.ndarray:
        mask = self.density.values > 0
        if self.support is not None:
            mask = mask & np.asarray(self.support, dtype=bool).reshape(mask.shape)
        return mask.reshape(-1)


@dataclass(frozen=True)
class TransportedDensity:
    """Lagrangian description of ``c_t``: values at the images ``T(x)`` of the
    active source nodes, with quadrature weights of the source cells."""

    t: float
    source: np.ndarray
    positions: np.ndarray
    values: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray
    source_weights: np.ndarray

    def total_mass(self) -> float:
        # int c_t dy = int c_s alpha dx after the change of variables y = T(x)
        return float(np.sum(self.values * self.delta * self.source_weights))

    def max_density(self) -> float:
        return float(np.max(self.values, initial=0.0))

    def to_grid(self, template: GridDensity) -> GridDensity:
        """Interpolate onto a lattice (1-D: piecewise linear; zero outside the image)."""
        if template.dimension != 1:
            from scipy.interpolate import griddata

            vals = griddata(self.positions, self.values, template.nodes(), method="linear", fill_value=0.0)
            return template.with_values(np.maximum(vals, 0.0).reshape(template.shape))
        order = np.argsort(self.positions[:, 0])
        xs = self.positions[order, 0]
        vals = np.interp(template.axes()[0], xs, self.values[order], left=0.0, right=0.0)
        return template.with_values(vals)


def density_along_flow(ctx: FlowContext, t: float) -> TransportedDensity:
    """Transport ``c_s`` to time ``t`` with ``c(t, T(x)) = c_s(x) alpha / delta``.

    ``alpha = q^2`` and ``delta = det DT`` come from the closed-form
    characteristic maps with finite-difference derivatives of ``xi_s``.
    """
    if not (0.0 <= t <= 1.0):
        raise InputError("t must lie in [0, 1]")
    active = ctx.active()
    nodes = ctx.xi_s.nodes()[active]
    V = ctx.xi_s.flat()[active]
    G = ctx.xi_s.gradient_grid().reshape(-1, ctx.xi_s.dimension)[active]
    H = ctx.xi_s.hessian_grid().reshape(-1, ctx.xi_s.dimension, ctx.xi_s.dimension)[active]
    maps = characteristic_maps(V, G, H, t - ctx.s)
    alpha = maps["q"] ** 2
    delta = np.linalg.det(maps["DT"])
    if np.any(delta <= 0):
        raise DegenerateJacobian(f"Jacobian determinant {np.min(delta):.3e} at t={t:.6g}")
    c_s = ctx.density.values.reshape(-1)[active]
    weights = ctx.density.cell_weights().reshape(-1)[active]
    return TransportedDensity(float(t), nodes, nodes + maps["displacement"], c_s * alpha / delta,
                              alpha, delta, weights)


@dataclass(frozen=True)
class DensityProfile:
    times: np.ndarray
    values: np.ndarray
    second_differences: np.ndarray
    classification: str


def _second_differences(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Divided second differences on a possibly non-uniform time grid."""
    t0, t1, t2 = times[:-2], times[1:-1], times[2:]
    v0, v1, v2 = values[:-2], values[1:-1], values[2:]
    return 2.0 * ((v2 - v1) / (t2 - t1) - (v1 - v0) / (t1 - t0)) / (t2 - t0)


def check_density_convexity(ctx: FlowContext, x, times, tolerance: float | None = None):
    """Sample ``t -> c(t, T_{s->t}(x))`` at a source node and test convexity.

    ``x`` is a node index tuple or a point of the lattice.  Returns
    ``(is_convex, DensityProfile)``; the profile is classified as
    ``"constant"`` or ``"convex"``.
    """
    times = np.sort(np.asarray(times, dtype=float))
    if times.shape[0] < 3:
        raise InputError("at least three times are needed")
    idx = tuple(x) if isinstance(x, tuple) else ctx.xi_s.index_of(x)
    flat = int(np.ravel_multi_index(idx, ctx.xi_s.shape))
    if not ctx.active()[flat]:
        raise InputError("node is not in the active support")
    d = ctx.xi_s.dimension
    V = ctx.xi_s.flat()[flat:flat + 1]
    G = ctx.xi_s.gradient_grid().reshape(-1, d)[flat:flat + 1]
    H = ctx.xi_s.hessian_grid().reshape(-1, d, d)[flat:flat + 1]
    c_s = float(ctx.density.values.reshape(-1)[flat])
    vals = []
    for t in times:
        m = characteristic_maps(V, G, H, t - ctx.s)
        det = float(np.linalg.det(m["DT"][0]))
        if det <= 0:
            raise DegenerateJacobian(f"Jacobian determinant {det:.3e} at t={t:.6g}")
        vals.append(c_s * float(m["q"][0]) ** 2 / det)
    vals = np.asarray(vals)
    if tolerance is None:
        tolerance = 10.0 * float(np.max(ctx.xi_s.spacing))
    sd = _second_differences(times, vals)
    scale = max(1.0, float(np.max(np.abs(vals))))
    constant = float(np.max(np.abs(vals - vals[0]))) <= 1e-12 * scale
    ok = bool(np.min(sd) >= -tolerance * scale)
    return ok, DensityProfile(times, vals, sd, "constant" if constant else "convex")


def linf_convexity_check(ctx: FlowContext, times, tolerance: float | None = None):
    """Compare ``max c_t`` with the chord between the first and last sampled
    times; returns a list of ``(t, excess)`` beyond the tolerance."""
    times = np.sort(np.asarray(times, dtype=float))
    peaks = np.array([density_along_flow(ctx, float(t)).max_density() for t in times])
    if tolerance is None:
        tolerance = 10.0 * float(np.max(ctx.xi_s.spacing))
    t0, t1 = times[0], times[-1]
    lam = (times - t0) / (t1 - t0)
    chord = (1.0 - lam) * peaks[0] + lam * peaks[-1]
    scale = max(1.0, float(np.max(peaks)))
    excess = peaks - chord
    return [(float(t), float(e)) for t, e in zip(times, excess) if e > tolerance * scale]
