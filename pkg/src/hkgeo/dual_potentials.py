"""Optimal dual potentials, L-transforms on point sets and Monge maps.

Two parametrisations of a dual pair are used throughout:

* ``phi0, phi1`` with ``phi1(x1) - phi0(x0) <= L_tau(x1 - x0)`` where
  ``L_tau(z) = -(1/tau) log cos|z|`` for ``|z| < pi/2``;
* ``xi0 = (exp(2 tau phi0) - 1)/(2 tau)`` and ``xi1 = (1 - exp(-2 tau phi1))/(2 tau)``,
  for which the constraint reads ``(1 - 2 tau xi1)(1 + 2 tau xi0) >= cos^2``.

Potentials on a finite point set are extended by ``+inf`` (for ``phi0``)
or ``-inf`` (for ``phi1``) elsewhere.  Infinities are kept explicit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cone_geometry import DilationTransportPair, arctan_vec
from .errors import DimensionMismatch, InputError, NonpositiveParameter, NotOptimal, VertexRegion
from .let_solver import TransportPlan
from .measures import DiscreteMeasure, _check_dims, pairwise_distances

HALF_PI = 0.5 * np.pi

__all__ = [
    "PotentialPair",
    "L_cost",
    "xi_from_phi0",
    "xi_from_phi1",
    "phi0_from_xi",
    "phi1_from_xi",
    "potentials_from_plan",
    "forward_L_transform",
    "backward_L_transform",
    "check_tightness",
    "monge_map_from_potential",
]


def L_cost(z, tau: float = 1.0) -> np.ndarray:
    """``-(1/tau) log cos|z|`` inside the open ball of radius pi/2, ``+inf`` outside.

    ``z`` holds distances (any shape).
    """
    r = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(r < HALF_PI, -np.log(np.cos(np.minimum(r, HALF_PI))) / tau, np.inf)


def xi_from_phi0(phi0, tau: float = 1.0):
    return np.expm1(2.0 * tau * np.asarray(phi0, dtype=float)) / (2.0 * tau)


def xi_from_phi1(phi1, tau: float = 1.0):
    return -np.expm1(-2.0 * tau * np.asarray(phi1, dtype=float)) / (2.0 * tau)


def phi0_from_xi(xi0, tau: float = 1.0):
    with np.errstate(divide="ignore"):
        return np.log1p(2.0 * tau * np.asarray(xi0, dtype=float)) / (2.0 * tau)


def phi1_from_xi(xi1, tau: float = 1.0):
    with np.errstate(divide="ignore"):
        return -np.log1p(-2.0 * tau * np.asarray(xi1, dtype=float)) / (2.0 * tau)


@dataclass(frozen=True)
class PotentialPair:
    """Dual potentials on the atoms of ``mu0`` (index 0) and ``mu1`` (index 1)."""

    points0: np.ndarray
    points1: np.ndarray
    phi0: np.ndarray
    phi1: np.ndarray
    xi0: np.ndarray
    xi1: np.ndarray
    tau: float = 1.0

    def duality_value(self, mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> float:
        """``sum xi1 m1 - sum xi0 m0``; equals ``HK^2/(2 tau)`` for optimal pairs."""
        return float(np.sum(self.xi1 * mu1.masses) - np.sum(self.xi0 * mu0.masses))

    def constraint_violation(self) -> float:
        """Largest ``cos^2 - (1 - 2 tau xi1)(1 + 2 tau xi0)`` over pairs closer than pi/2."""
        if self.points0.shape[0] == 0 or self.points1.shape[0] == 0:
            return 0.0
        dist = pairwise_distances(self.points0, self.points1)
        c2 = np.where(dist < HALF_PI, np.cos(np.minimum(dist, HALF_PI)) ** 2, 0.0)
        prod = (1.0 + 2.0 * self.tau * self.xi0)[:, None] * (1.0 - 2.0 * self.tau * self.xi1)[None, :]
        return float(np.max(np.where(dist < HALF_PI, c2 - prod, -np.inf)))

    def phi0_at(self, query) -> np.ndarray:
        """``phi0`` extended by ``+inf`` off its point set."""
        return _extend(self.points0, self.phi0, query, np.inf)

    def phi1_at(self, query) -> np.ndarray:
        """``phi1`` extended by ``-inf`` off its point set."""
        return _extend(self.points1, self.phi1, query, -np.inf)


def _extend(points, values, query, fill) -> np.ndarray:
    q = np.atleast_2d(np.asarray(query, dtype=float))
    out = np.full(q.shape[0], fill)
    if points.shape[0] == 0:
        return out
    dist = pairwise_distances(q, points)
    hit = dist == 0.0
    rows = np.any(hit, axis=1)
    out[rows] = values[np.argmax(hit[rows], axis=1)]
    return out


def potentials_from_plan(plan: TransportPlan, mu0: DiscreteMeasure, mu1: DiscreteMeasure,
                         tau: float = 1.0, tolerance: float = 1e-6) -> PotentialPair:
    """Potentials built from the optimal densities ``sigma0, sigma1`` of a plan.

    Atoms with no partner closer than pi/2 (``sigma = 0``) get
    ``phi0 = -inf, xi0 = -1/(2 tau)`` and ``phi1 = +inf, xi1 = 1/(2 tau)``.
    """
    _check_dims(mu0, mu1)
    if not tau > 0:
        raise NonpositiveParameter("tau must be positive")
    cert = plan.certificate
    if cert is not None and not cert.passes(tolerance):
        raise NotOptimal(f"plan certificate {cert.worst():.3e} exceeds {tolerance:g}")
    s0 = np.asarray(plan.sigma0, dtype=float)
    s1 = np.asarray(plan.sigma1, dtype=float)
    if s0.shape[0] != mu0.n_atoms or s1.shape[0] != mu1.n_atoms:
        raise InputError("plan does not belong to these measures")
    with np.errstate(divide="ignore"):
        phi0 = np.where(s0 > 0, np.log(np.where(s0 > 0, s0, 1.0)) / (2.0 * tau), -np.inf)
        phi1 = np.where(s1 > 0, -np.log(np.where(s1 > 0, s1, 1.0)) / (2.0 * tau), np.inf)
    xi0 = (s0 - 1.0) / (2.0 * tau)
    xi1 = (1.0 - s1) / (2.0 * tau)
    return PotentialPair(mu0.positions.copy(), mu1.positions.copy(), phi0, phi1, xi0, xi1, float(tau))


def _as_points(points, d=None) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p.reshape(-1, 1) if d in (None, 1) else p.reshape(1, -1)
    return p


def forward_L_transform(points, phi0, query, tau: float = 1.0) -> np.ndarray:
    """``inf_{|x1 - x0| < pi/2} phi0(x0) + L_tau(x1 - x0)`` over the finite set ``points``.

    ``phi0`` may contain ``+inf`` (ignored) and ``-inf``.  Queries with no
    point of the set inside the open pi/2 ball get ``+inf``.
    """
    A = _as_points(points)
    B = _as_points(query, A.shape[1])
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch("point sets differ in dimension")
    vals = np.asarray(phi0, dtype=float).reshape(-1)
    if vals.shape[0] != A.shape[0]:
        raise InputError("one value per point is required")
    if A.shape[0] == 0:
        return np.full(B.shape[0], np.inf)
    dist = pairwise_distances(B, A)
    near = dist < HALF_PI
    cost = L_cost(dist, tau)
    with np.errstate(invalid="ignore"):
        cand = np.where(near, vals[None, :] + np.where(near, cost, 0.0), np.inf)
    # -inf + finite = -inf; +inf entries never win; a nan only arises from
    # -inf + inf, which the near mask excludes
    return np.min(cand, axis=1)


def backward_L_transform(points, phi1, query, tau: float = 1.0) -> np.ndarray:
    """``sup_{|x1 - x0| < pi/2} phi1(x1) - L_tau(x1 - x0)``; ``-inf`` without near points."""
    return -forward_L_transform(points, -np.asarray(phi1, dtype=float), query, tau)


def _gap(a: np.ndarray, b: np.ndarray) -> float:
    both = np.isinf(a) & np.isinf(b) & (np.sign(a) == np.sign(b))
    diff = np.where(both, 0.0, np.abs(a - b))
    return float(np.max(diff, initial=0.0))


def check_tightness(pair: PotentialPair, set0=None, set1=None, tolerance: float = 1e-9):
    """Check ``phi0 = phi1^{<-L}`` on ``set0`` and ``phi1 = phi0^{L->}`` on ``set1``.

    The potentials are evaluated as point-set functions (``+inf``/``-inf`` off
    their supports) and the transforms are taken over those supports.  The
    evaluation sets default to the union of both supports.
    """
    union = np.vstack([pair.points0, pair.points1])
    set0 = union if set0 is None else _as_points(set0, union.shape[1])
    set1 = union if set1 is None else _as_points(set1, union.shape[1])
    keep1 = pair.phi1 > -np.inf
    keep0 = pair.phi0 < np.inf
    back = backward_L_transform(pair.points1[keep1], pair.phi1[keep1], set0, pair.tau)
    fwd = forward_L_transform(pair.points0[keep0], pair.phi0[keep0], set1, pair.tau)
    gap = max(_gap(pair.phi0_at(set0), back), _gap(pair.phi1_at(set1), fwd))
    return gap <= tolerance, gap


def monge_map_from_potential(xi0, tau: float = 1.0, query=None) -> DilationTransportPair:
    """Dilation-transport pair ``T(x) = x + arctan(tau grad xi0/(1 + 2 tau xi0))``,
    ``q^2 = (1 + 2 tau xi0)^2 + tau^2 |grad xi0|^2``.

    ``xi0`` is a grid function (values interpolated, gradient by central
    differences) or a pair ``(value, gradient)`` of callables on ``(n, d)``
    arrays.  When ``query`` is given the points are validated eagerly.
    """
    if isinstance(xi0, tuple):
        value_fn, grad_fn = xi0
    elif hasattr(xi0, "value") and hasattr(xi0, "gradient"):
        value_fn, grad_fn = xi0.value, xi0.gradient
    else:
        raise InputError("xi0 must be a grid function or a (value, gradient) pair")

    def _jets(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.asarray(value_fn(x), dtype=float).reshape(-1)
        g = np.asarray(grad_fn(x), dtype=float).reshape(x.shape[0], -1)
        P = 1.0 + 2.0 * tau * v
        if np.any(P <= 0):
            raise VertexRegion("1 + 2 tau xi0 must be positive at every query atom")
        return x, v, g, P

    def T(x):
        x, _, g, P = _jets(x)
        return x + arctan_vec(tau * g / P[:, None])

    def q(x):
        _, _, g, P = _jets(x)
        return np.sqrt(P * P + tau * tau * np.sum(g * g, axis=1))

    if query is not None:
        _jets(query)
    return DilationTransportPair(T, q)
