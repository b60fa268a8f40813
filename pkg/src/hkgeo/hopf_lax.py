"""Generalised Hopf-Lax flows of HK potentials.

The forward operator acts on a potential ``xi0 >= -1/2`` by

    (P_t xi0)(x) = inf_y (1 / 2t) (1 - cos^2_{pi/2}|x - y| / (1 + 2 t xi0(y)))

and the backward operator is ``R_t xi = -P_t(-xi)``.  Sources are point sets
carrying finite values, with ``+inf`` understood everywhere else; grid
potentials are the special case where the point set is a lattice.  The value
of ``P_t`` never exceeds ``1/(2t)``, which is what a ``+inf`` source yields.

Smooth potentials are also transported along characteristics in closed form
(:class:`SmoothPotentialFlow`), which drives the characteristic system for
positions, dilations and Jacobians.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .cone_geometry import arctan_vec
from .errors import (
    DimensionMismatch,
    DomainError,
    InfeasiblePotential,
    InputError,
    LeftContactSet,
    NonpositiveParameter,
    OrderViolation,
    VertexRegion,
)
from .measures import grid_from_dict, grid_to_dict, pairwise_distances

HALF_PI = 0.5 * np.pi
_CHUNK = 2_000_000

__all__ = [
    "GridFunction",
    "PointPotential",
    "ContactSet",
    "CharacteristicState",
    "Trajectory",
    "CurvatureReport",
    "hopf_lax_evaluate",
    "hopf_lax_forward",
    "hopf_lax_backward",
    "semigroup_residual",
    "lipschitz_bound",
    "default_contact_tolerance",
    "contact_set",
    "characteristic_maps",
    "transport_map",
    "SmoothPotentialFlow",
    "HopfLaxPairFlow",
    "characteristic_flow",
    "curvature_diagnostics",
    "curvature_ratios",
    "Z_factor",
]


# ---------------------------------------------------------------------------
# potentials


@dataclass(frozen=True)
class PointPotential:
    """Finite values on a point set; ``+inf`` everywhere else (for forward use)."""

    points: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        vals = np.asarray(self.values, dtype=float).reshape(-1)
        if pts.shape[0] != vals.shape[0]:
            raise InputError("points and values differ in length")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "values", vals)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def negated(self) -> "PointPotential":
        return PointPotential(self.points, -self.values)


class GridFunction:
    """Extended-real scalar field on a regular lattice over a box.

    Values may be ``+inf`` or ``-inf``.  Derivatives use second-order central
    differences in the interior and one-sided differences at the boundary.
    """

    def __init__(self, box, spacing, values):
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        spacing = np.asarray(spacing, dtype=float).reshape(-1)
        if spacing.shape[0] == 1 and box.shape[0] > 1:
            spacing = np.repeat(spacing, box.shape[0])
        if spacing.shape[0] != box.shape[0]:
            raise DimensionMismatch("spacing must have one entry per axis")
        if np.any(spacing <= 0):
            raise NonpositiveParameter("spacing must be positive")
        shape = tuple(int(round((hi - lo) / h)) + 1 for (lo, hi), h in zip(box, spacing))
        values = np.asarray(values, dtype=float)
        if values.size != int(np.prod(shape)):
            raise InputError(f"values do not fit the lattice {shape}")
        self.box = box
        self.spacing = spacing
        self.values = values.reshape(shape)
        self._derivs = None
        self._coeffs = {}

    # geometry ---------------------------------------------------------------
    @classmethod
    def from_function(cls, fn, box, spacing) -> "GridFunction":
        box = np.asarray(box, dtype=float).reshape(-1, 2)
        spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (box.shape[0],))
        shape = tuple(int(round((hi - lo) / h)) + 1 for (lo, hi), h in zip(box, spacing))
        probe = cls(box, spacing, np.zeros(shape))
        return probe.with_values(np.asarray(fn(probe.nodes()), dtype=float))

    @classmethod
    def like(cls, template, values) -> "GridFunction":
        return cls(template.box, template.spacing, values)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.box, self.spacing, values)

    @property
    def dimension(self) -> int:
        return self.box.shape[0]

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def axes(self) -> list:
        return [lo + h * np.arange(n) for (lo, _), h, n in zip(self.box, self.spacing, self.shape)]

    def nodes(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def as_source(self) -> PointPotential:
        """Finite nodes as a point potential (``+inf`` nodes are implicit)."""
        vals = self.flat()
        keep = vals < np.inf
        return PointPotential(self.nodes()[keep], vals[keep])

    def index_of(self, x) -> tuple:
        x = np.asarray(x, dtype=float).reshape(-1)
        idx = np.round((x - self.box[:, 0]) / self.spacing).astype(int)
        return tuple(int(i) for i in idx)

    def node(self, index) -> np.ndarray:
        return self.box[:, 0] + self.spacing * np.asarray(index, dtype=float)

    def to_dict(self) -> dict:
        return grid_to_dict(self.box, self.spacing, self.values)

    @classmethod
    def from_dict(cls, obj) -> "GridFunction":
        box, spacing, values = grid_from_dict(obj)
        return cls(box, spacing, values)

    # derivatives --------------------------------------------------------------
    def _derivative_grids(self):
        if self._derivs is None:
            if not np.all(np.isfinite(self.values)):
                raise InputError("derivatives need a finite grid function")
            d = self.dimension
            grads = np.gradient(self.values, *self.spacing) if d > 1 else [np.gradient(self.values, self.spacing[0])]
            hess = [[None] * d for _ in range(d)]
            for i in range(d):
                row = np.gradient(grads[i], *self.spacing) if d > 1 else [np.gradient(grads[i], self.spacing[0])]
                for j in range(d):
                    hess[i][j] = row[j]
            for i in range(d):
                for j in range(i + 1, d):
                    sym = 0.5 * (hess[i][j] + hess[j][i])
                    hess[i][j] = hess[j][i] = sym
            self._derivs = (list(grads), hess)
        return self._derivs

    def gradient_grid(self) -> np.ndarray:
        grads, _ = self._derivative_grids()
        return np.stack(grads, axis=-1)

    def hessian_grid(self) -> np.ndarray:
        _, hess = self._derivative_grids()
        d = self.dimension
        return np.stack([np.stack([hess[i][j] for j in range(d)], axis=-1) for i in range(d)], axis=-2)

    def _fractional_index(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.dimension:
            raise DimensionMismatch("query points have the wrong dimension")
        return ((pts - self.box[:, 0]) / self.spacing).T

    def _interp(self, key, arr, points, order):
        coords = self._fractional_index(points)
        if order <= 1:
            return ndimage.map_coordinates(arr, coords, order=1, mode="nearest")
        if key not in self._coeffs:
            self._coeffs[key] = ndimage.spline_filter(arr, order=order, mode="nearest")
        return ndimage.map_coordinates(self._coeffs[key], coords, order=order, mode="nearest", prefilter=False)

    def value(self, points, order: int = 1) -> np.ndarray:
        """Interpolated values (linear by default, cubic spline with ``order=3``)."""
        if order > 1 and not np.all(np.isfinite(self.values)):
            raise InputError("spline interpolation needs finite values")
        return self._interp("v", self.values, points, order)

    def gradient(self, points, order: int = 1) -> np.ndarray:
        grads, _ = self._derivative_grids()
        return np.stack([self._interp(("g", i), g, points, order) for i, g in enumerate(grads)], axis=-1)

    def hessian(self, points, order: int = 1) -> np.ndarray:
        _, hess = self._derivative_grids()
        d = self.dimension
        pts = np.atleast_2d(points)
        out = np.empty((pts.shape[0], d, d))
        for i in range(d):
            for j in range(i, d):
                out[:, i, j] = out[:, j, i] = self._interp(("h", i, j), hess[i][j], pts, order)
        return out


def _as_source(xi) -> PointPotential:
    if isinstance(xi, PointPotential):
        return xi
    if isinstance(xi, GridFunction):
        return xi.as_source()
    raise InputError("potential must be a GridFunction or a PointPotential")


def _query_points(query):
    if isinstance(query, GridFunction):
        return query.nodes()
    q = np.asarray(query, dtype=float)
    return q.reshape(-1, 1) if q.ndim == 1 else q


# ---------------------------------------------------------------------------
# Hopf-Lax operators


def hopf_lax_evaluate(source, tau: float, points, horizon: float | None = None) -> np.ndarray:
    """Evaluate ``P_tau`` of a point potential at arbitrary points.

    ``horizon`` (default ``tau``) sets the feasibility requirement
    ``source >= -1/(2 horizon)``.
    """
    src = _as_source(source)
    if not tau > 0:
        raise NonpositiveParameter("flow time must be positive")
    pts = _query_points(points)
    if pts.shape[1] != src.dimension:
        raise DimensionMismatch("query points and source differ in dimension")
    horizon = tau if horizon is None else horizon
    vals = src.values
    if vals.size and (np.isnan(vals).any() or np.min(vals) < -0.5 / horizon - 1e-15):
        raise InfeasiblePotential(
            f"potential minimum {np.min(vals):.6g} below {-0.5 / horizon:.6g}"
        )
    cap = 0.5 / tau
    out = np.full(pts.shape[0], cap)
    if vals.size == 0:
        return out
    denom = 1.0 + 2.0 * tau * vals  # >= 0 by feasibility, may be +inf
    step = max(1, _CHUNK // max(1, vals.size))
    for start in range(0, pts.shape[0], step):
        chunk = pts[start:start + step]
        dist = pairwise_distances(chunk, src.points)
        c2 = np.where(dist < HALF_PI, np.cos(np.minimum(dist, HALF_PI)) ** 2, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(c2 > 0, c2 / denom[None, :], 0.0)
        ratio = np.where((c2 > 0) & (denom[None, :] <= 0), np.inf, ratio)
        cand = cap * (1.0 - ratio)
        out[start:start + step] = np.minimum(np.min(cand, axis=1), cap)
    return out


def hopf_lax_forward(xi0, t: float, query=None, horizon: float = 1.0):
    """Forward flow ``xi_t = P_t xi0``.

    ``xi0`` is a :class:`GridFunction` or a :class:`PointPotential`.  With no
    ``query`` the result lives on the lattice of ``xi0`` (grid input
    required); a :class:`GridFunction` query yields a grid on its lattice, and
    an array of points yields an array.
    """
    if not (0 < t <= horizon):
        raise InputError("t must lie in (0, horizon]")
    target = query if query is not None else xi0
    if not isinstance(target, GridFunction) and query is None:
        raise InputError("a query lattice or point array is required for point sources")
    vals = hopf_lax_evaluate(xi0, t, _query_points(target), horizon=horizon)
    if isinstance(target, GridFunction):
        return target.with_values(vals.reshape(target.shape))
    return vals


def hopf_lax_backward(xibar1, t: float, query=None, horizon: float = 1.0):
    """Backward flow ``xibar_t = R_{1-t} xibar1 = -P_{1-t}(-xibar1)`` for ``t`` in ``[0, 1)``.

    Point sources are understood as ``-inf`` off their support.
    """
    if not (0 <= t < 1):
        raise InputError("t must lie in [0, 1)")
    tau = 1.0 - t
    if isinstance(xibar1, GridFunction):
        flipped = xibar1.with_values(-xibar1.values)
    else:
        flipped = _as_source(xibar1).negated()
    target = query if query is not None else xibar1
    if not isinstance(target, GridFunction) and query is None:
        raise InputError("a query lattice or point array is required for point sources")
    try:
        vals = -hopf_lax_evaluate(flipped, tau, _query_points(target), horizon=horizon)
    except InfeasiblePotential as exc:
        raise InfeasiblePotential(f"backward source exceeds the upper bound: {exc}") from exc
    if isinstance(target, GridFunction):
        return target.with_values(vals.reshape(target.shape))
    return vals


def _sup_diff(a: np.ndarray, b: np.ndarray) -> float:
    both_inf = np.isinf(a) & np.isinf(b) & (np.sign(a) == np.sign(b))
    diff = np.where(both_inf, 0.0, np.abs(a - b))
    return float(np.max(diff)) if diff.size else 0.0


def semigroup_residual(xi0, s: float, t: float) -> float:
    """Max-norm of ``P_t xi0 - P_{t-s}(P_s xi0)`` over the lattice of ``xi0``."""
    if not isinstance(xi0, GridFunction):
        raise InputError("semigroup_residual needs a grid potential")
    if not (0 <= s < t <= 1):
        raise InputError("need 0 <= s < t <= 1")
    direct = hopf_lax_forward(xi0, t)
    if s == 0:
        return _sup_diff(direct.values, hopf_lax_forward(xi0, t).values)
    mid = hopf_lax_forward(xi0, s)
    chained = hopf_lax_forward(mid, t - s, horizon=1.0 - s)
    return _sup_diff(direct.values, chained.values)


def lipschitz_bound(a: float, t: float) -> float:
    """``1 / (t (1 + 2 a t))``: Lipschitz and semi-concavity constant of ``P_t xi0``
    when ``xi0 >= a``."""
    return 1.0 / (t * (1.0 + 2.0 * a * t))


def default_contact_tolerance(t: float, spacing, lower: float = -0.5, upper: float = 0.5) -> float:
    """Equality tolerance for contact detection on a lattice.

    ``xi_t - xibar_t`` vanishes at a contact point with zero gradient and is
    bounded above by ``(L + Lbar)/2 |x - x*|^2`` (semi-concavity of ``xi_t``,
    semi-convexity of ``xibar_t``).  The nearest node lies within
    ``sqrt(d) h / 2``, which gives ``(L + Lbar) d h^2 / 8``.  ``lower`` bounds
    ``xi0`` from below and ``upper`` bounds ``xibar1`` from above.
    """
    spacing = np.atleast_1d(np.asarray(spacing, dtype=float))
    h = float(np.max(spacing))
    d = spacing.shape[0]
    lam = lipschitz_bound(lower, t) + lipschitz_bound(-upper, 1.0 - t)
    return lam * d * h * h / 8.0 + 1e-12


@dataclass(frozen=True)
class ContactSet:
    """Nodes where forward and backward potentials agree within ``tolerance``.

    ``minus_mask`` marks pure-decay nodes (``xi0 = -1/2``) and ``plus_mask``
    pure-growth nodes (``xibar1 = 1/2``); both are subsets of ``mask``.
    """

    mask: np.ndarray
    tolerance: float
    minus_mask: np.ndarray | None = None
    plus_mask: np.ndarray | None = None
    t: float | None = None

    def indices(self) -> np.ndarray:
        return np.argwhere(self.mask)

    def count(self) -> int:
        return int(np.count_nonzero(self.mask))


def contact_set(xi_t: GridFunction, xibar_t: GridFunction, tolerance: float | None = None,
                t: float | None = None) -> ContactSet:
    """Contact set ``{xi_t = xibar_t}`` on a common lattice."""
    if xi_t.shape != xibar_t.shape or not np.allclose(xi_t.box, xibar_t.box):
        raise InputError("forward and backward potentials must share a lattice")
    if tolerance is None:
        if t is None:
            raise InputError("either a tolerance or the time t is required")
        tolerance = default_contact_tolerance(t, xi_t.spacing)
    a, b = xi_t.values, xibar_t.values
    both_inf = np.isinf(a) & np.isinf(b) & (np.sign(a) == np.sign(b))
    with np.errstate(invalid="ignore"):
        diff = np.where(both_inf, 0.0, a - b)
    if np.any(diff < -tolerance):
        worst = float(np.min(diff))
        raise OrderViolation(f"forward potential below backward potential by {-worst:.3e}")
    mask = np.abs(diff) <= tolerance
    minus = plus = None
    if t is not None and 0 < t < 1:
        minus = mask & (a <= -0.5 / (1.0 - t) + tolerance)
        plus = mask & (b >= 0.5 / t - tolerance)
    return ContactSet(mask, float(tolerance), minus, plus, t)


# ---------------------------------------------------------------------------
# characteristic maps


def _arctan_jacobian(w: np.ndarray) -> np.ndarray:
    """Jacobian of ``w -> arctan(|w|) w/|w|`` for a stack of vectors ``(n, d)``."""
    n, d = w.shape
    norm = np.linalg.norm(w, axis=1)
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    safe = np.where(norm > 0, norm, 1.0)
    e = w / safe[:, None]
    outer = e[:, :, None] * e[:, None, :]
    radial = 1.0 / (1.0 + norm**2)
    tangential = np.where(norm > 0, np.arctan(norm) / safe, 1.0)
    return radial[:, None, None] * outer + tangential[:, None, None] * (eye - outer)


def characteristic_maps(value, grad, hess, tau: float):
    """Closed-form characteristic data from potential jets at source points.

    For ``value (n,)``, ``grad (n, d)`` and ``hess (n, d, d)`` of ``xi_s`` this
    returns a dict with the displacement ``T - x``, the dilation ``q``, the
    Jacobian ``DT`` and, at the transported point, the jets of ``xi_{s+tau}``.
    """
    V = np.asarray(value, dtype=float).reshape(-1)
    G = np.asarray(grad, dtype=float).reshape(V.shape[0], -1)
    H = np.asarray(hess, dtype=float).reshape(V.shape[0], G.shape[1], G.shape[1])
    P = 1.0 + 2.0 * tau * V
    if np.any(P <= 0):
        raise VertexRegion("1 + 2 tau xi must be positive")
    d = G.shape[1]
    g2 = np.sum(G * G, axis=1)
    q2 = P * P + tau * tau * g2
    w = tau * G / P[:, None]
    disp = arctan_vec(w)
    Dw = tau * H / P[:, None, None] - 2.0 * tau * tau * G[:, :, None] * G[:, None, :] / (P * P)[:, None, None]
    DT = np.eye(d)[None, :, :] + _arctan_jacobian(w) @ Dw
    HG = np.einsum("nij,nj->ni", H, G)
    grad_q2 = 4.0 * tau * P[:, None] * G + 2.0 * tau * tau * HG
    DGt = H / q2[:, None, None] - G[:, :, None] * grad_q2[:, None, :] / (q2 * q2)[:, None, None]
    hess_t = DGt @ np.linalg.inv(DT)
    hess_t = 0.5 * (hess_t + np.swapaxes(hess_t, 1, 2))
    return {
        "displacement": disp,
        "q": np.sqrt(q2),
        "DT": DT,
        "value_t": (V * P + 0.5 * tau * g2) / q2,
        "grad_t": G / q2[:, None],
        "hess_t": hess_t,
    }


def transport_map(xi_s, s: float, t: float, x, gradient=None, xi_t=None, order: int = 1):
    """Transport and dilation ``(T_{s->t}(x), q_{s->t}(x))`` from a contact point.

    ``xi_s`` is a :class:`GridFunction` (gradient by central differences unless
    ``gradient`` is given) or any object with ``value``/``gradient`` methods.
    When ``xi_t`` (callable or object with ``value``) is supplied, the
    residual of ``(1 - 2 tau xi_t(T)) (1 + 2 tau xi_s(x)) = cos^2|x - T|`` is
    returned as a third element.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    tau = t - s
    val = float(np.asarray(xi_s.value(x[None, :])).reshape(-1)[0])
    if gradient is None:
        g = np.asarray(xi_s.gradient(x[None, :])).reshape(-1)
    else:
        g = np.asarray(gradient(x) if callable(gradient) else gradient, dtype=float).reshape(-1)
    P = 1.0 + 2.0 * tau * val
    if P <= 0:
        raise VertexRegion(f"1 + 2 tau xi = {P:.3e} is not positive")
    T = x + arctan_vec(tau * g / P)
    q = math.sqrt(P * P + tau * tau * float(g @ g))
    if xi_t is None:
        return T, q
    fn = xi_t.value if hasattr(xi_t, "value") else xi_t
    vt = float(np.asarray(fn(T[None, :])).reshape(-1)[0])
    r = float(np.linalg.norm(T - x))
    residual = abs((1.0 - 2.0 * tau * vt) * P - math.cos(min(r, HALF_PI)) ** 2)
    return T, q, residual


# ---------------------------------------------------------------------------
# potential providers for the characteristic system


class SmoothPotentialFlow:
    """Classical solution of the Hamilton-Jacobi flow started from a smooth
    potential ``xi_s`` at time ``s``, evaluated through its characteristics.

    ``value``, ``grad`` and ``hess`` map an ``(n, d)`` array of points to
    ``(n,)``, ``(n, d)`` and ``(n, d, d)`` arrays.  Valid as long as
    characteristics do not cross (short times around ``s``).
    """

    def __init__(self, value, grad, hess, s: float, dimension: int):
        self._value, self._grad, self._hess = value, grad, hess
        self.s = float(s)
        self.dimension = int(dimension)
        self._cache = {}

    @classmethod
    def from_grid(cls, xi_s: GridFunction, s: float, order: int = 3) -> "SmoothPotentialFlow":
        """Spline-interpolated grid values with finite-difference derivatives."""
        return cls(
            lambda p: xi_s.value(p, order=order),
            lambda p: xi_s.gradient(p, order=order),
            lambda p: xi_s.hessian(p, order=order),
            s,
            xi_s.dimension,
        )

    @classmethod
    def constant(cls, a: float, s: float, dimension: int) -> "SmoothPotentialFlow":
        return cls.quadratic(a, np.zeros(dimension), np.zeros((dimension, dimension)), s)

    @classmethod
    def quadratic(cls, c0: float, b, A, s: float, center=None) -> "SmoothPotentialFlow":
        """``xi_s(x) = c0 + b.(x - center) + (x - center).A(x - center)/2``."""
        b = np.atleast_1d(np.asarray(b, dtype=float))
        A = np.atleast_2d(np.asarray(A, dtype=float))
        A = 0.5 * (A + A.T)
        center = np.zeros_like(b) if center is None else np.asarray(center, dtype=float)
        d = b.shape[0]

        def value(p):
            y = np.atleast_2d(p) - center
            return c0 + y @ b + 0.5 * np.einsum("ni,ij,nj->n", y, A, y)

        def grad(p):
            y = np.atleast_2d(p) - center
            return b[None, :] + y @ A

        def hess(p):
            return np.broadcast_to(A, (np.atleast_2d(p).shape[0], d, d)).copy()

        return cls(value, grad, hess, s, d)

    def source_jets(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return (np.asarray(self._value(x), float).reshape(-1),
                np.asarray(self._grad(x), float).reshape(x.shape[0], -1),
                np.asarray(self._hess(x), float).reshape(x.shape[0], self.dimension, self.dimension))

    def maps(self, x, t: float):
        """Characteristic data from source points ``x`` at time ``s`` to time ``t``."""
        V, G, H = self.source_jets(x)
        return characteristic_maps(V, G, H, t - self.s)

    def preimage(self, t: float, y, guess=None, tol: float = 1e-14, max_iter: int = 50):
        """Source point ``x`` with ``T_{s->t}(x) = y`` (Newton iteration)."""
        y = np.asarray(y, dtype=float).reshape(-1)
        x = y.copy() if guess is None else np.asarray(guess, dtype=float).reshape(-1).copy()
        for _ in range(max_iter):
            m = self.maps(x[None, :], t)
            resid = x + m["displacement"][0] - y
            if np.max(np.abs(resid)) <= tol * (1.0 + np.max(np.abs(y))):
                return x
            x = x - np.linalg.solve(m["DT"][0], resid)
        m = self.maps(x[None, :], t)
        if np.max(np.abs(x + m["displacement"][0] - y)) > 1e-9 * (1.0 + np.max(np.abs(y))):
            raise DomainError("characteristic inversion failed (crossing characteristics?)")
        return x

    def jet(self, t: float, y):
        """``(xi_t(y), grad xi_t(y), hess xi_t(y))``."""
        x = self.preimage(t, y, guess=self._cache.get("last"))
        self._cache["last"] = x
        m = self.maps(x[None, :], t)
        return float(m["value_t"][0]), m["grad_t"][0], m["hess_t"][0]


class HopfLaxPairFlow:
    """Forward flow ``P_t xi0`` and backward flow ``R_{1-t} xibar1`` evaluated
    exactly at arbitrary points; derivatives by central differences of
    step ``fd_step``."""

    def __init__(self, forward_source, backward_source=None, fd_step: float = 1e-4):
        self.forward = _as_source(forward_source)
        if backward_source is None:
            self.backward = None
        elif isinstance(backward_source, GridFunction):
            self.backward = backward_source.with_values(-backward_source.values).as_source()
        else:
            self.backward = _as_source(backward_source).negated()
        self.fd_step = float(fd_step)
        self.dimension = self.forward.dimension

    def value(self, t: float, points) -> np.ndarray:
        return hopf_lax_evaluate(self.forward, t, points, horizon=1.0)

    def backward_value(self, t: float, points) -> np.ndarray:
        if self.backward is None:
            raise InputError("no backward source configured")
        return -hopf_lax_evaluate(self.backward, 1.0 - t, points, horizon=1.0)

    def contact_gap(self, t: float, y) -> float:
        y = np.atleast_2d(y)
        return float(self.value(t, y)[0] - self.backward_value(t, y)[0])

    def jet(self, t: float, y):
        y = np.asarray(y, dtype=float).reshape(-1)
        d = y.shape[0]
        h = self.fd_step
        eye = np.eye(d) * h
        stencil = [y]
        for i in range(d):
            stencil += [y + eye[i], y - eye[i]]
        for i in range(d):
            for j in range(i + 1, d):
                stencil += [y + eye[i] + eye[j], y + eye[i] - eye[j], y - eye[i] + eye[j], y - eye[i] - eye[j]]
        vals = self.value(t, np.vstack(stencil))
        f0 = vals[0]
        grad = np.empty(d)
        hess = np.empty((d, d))
        k = 1
        for i in range(d):
            fp, fm = vals[k], vals[k + 1]
            grad[i] = (fp - fm) / (2 * h)
            hess[i, i] = (fp - 2 * f0 + fm) / (h * h)
            k += 2
        for i in range(d):
            for j in range(i + 1, d):
                fpp, fpm, fmp, fmm = vals[k:k + 4]
                hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4 * h * h)
                k += 4
        return float(f0), grad, hess


# ---------------------------------------------------------------------------
# characteristic system


@dataclass(frozen=True)
class CharacteristicState:
    T: np.ndarray
    q: float
    B: np.ndarray
    delta: float


@dataclass
class Trajectory:
    """Integrated characteristic from ``x`` at time ``s`` with sampled jets
    and second-order residuals."""

    s: float
    x: np.ndarray
    times: np.ndarray
    T: np.ndarray
    q: np.ndarray
    B: np.ndarray
    delta: np.ndarray
    xi: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    residuals: dict = field(default_factory=dict)

    @property
    def dimension(self) -> int:
        return self.T.shape[1]

    def state(self, k: int) -> CharacteristicState:
        return CharacteristicState(self.T[k], float(self.q[k]), self.B[k], float(self.delta[k]))


def _second_difference(arr: np.ndarray, dt: float) -> np.ndarray:
    return (arr[2:] - 2.0 * arr[1:-1] + arr[:-2]) / (dt * dt)


def characteristic_flow(provider, s: float, x, t_end: float, dt: float = 1e-3,
                        contact_tolerance: float | None = None) -> Trajectory:
    """Integrate the characteristic system with classical RK4 from time ``s``
    to ``t_end`` (either direction) with fixed step ``dt``.

    State: position ``T``, dilation ``q``, Jacobian ``B`` (started at the
    identity) and its determinant ``delta``, driven by
    ``T' = grad xi_t(T)``, ``q' = 2 xi_t(T) q``, ``B' = D^2 xi_t(T) B`` and
    ``delta' = Laplacian xi_t(T) delta``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.shape[0]
    span = t_end - s
    n_steps = max(2, int(round(abs(span) / dt)))
    h = span / n_steps
    times = s + h * np.arange(n_steps + 1)

    def rhs(t, state):
        T = state[:d]
        q = state[d]
        B = state[d + 1:d + 1 + d * d].reshape(d, d)
        delta = state[-1]
        xi, g, A = provider.jet(t, T)
        return np.concatenate([g, [2.0 * xi * q], (A @ B).reshape(-1), [np.trace(A) * delta]])

    state = np.concatenate([x, [1.0], np.eye(d).reshape(-1), [1.0]])
    states = [state]
    for k in range(n_steps):
        t = times[k]
        k1 = rhs(t, state)
        k2 = rhs(t + 0.5 * h, state + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, state + 0.5 * h * k2)
        k4 = rhs(t + h, state + h * k3)
        state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        states.append(state)
    S = np.array(states)
    T = S[:, :d]
    q = S[:, d]
    B = S[:, d + 1:d + 1 + d * d].reshape(-1, d, d)
    delta = S[:, -1]
    xi = np.empty(len(times))
    grad = np.empty((len(times), d))
    hess = np.empty((len(times), d, d))
    for k, t in enumerate(times):
        xi[k], grad[k], hess[k] = provider.jet(t, T[k])
        if contact_tolerance is not None and hasattr(provider, "contact_gap"):
            gap = abs(provider.contact_gap(t, T[k])) if 0 < t < 1 else 0.0
            if gap > contact_tolerance:
                raise LeftContactSet(f"contact gap {gap:.3e} at t={t:.6g}")
    traj = Trajectory(s, x, times, T, q, B, delta, xi, grad, hess)
    traj.residuals = _second_order_residuals(traj, abs(h))
    return traj


def _second_order_residuals(traj: Trajectory, dt: float) -> dict:
    """Residuals of the second-order identities along the stored trajectory.

    The time step may be negative (backward integration); second differences
    are insensitive to the sign.
    """
    xi, g, A = traj.xi[1:-1], traj.grad[1:-1], traj.hess[1:-1]
    q, B, delta = traj.q[1:-1], traj.B[1:-1], traj.delta[1:-1]
    gg = np.einsum("ni,nj->nij", g, g)
    trA = np.trace(A, axis1=1, axis2=2)
    normA2 = np.sum(A * A, axis=(1, 2))
    g2 = np.sum(g * g, axis=1)
    T_dd = _second_difference(traj.T, dt)
    q_dd = _second_difference(traj.q, dt)
    B_dd = _second_difference(traj.B, dt)
    d_dd = _second_difference(traj.delta, dt)
    expected_T = -4.0 * xi[:, None] * g
    expected_q = g2 * q
    expected_B = -4.0 * (gg + xi[:, None, None] * A) @ B
    expected_d = (trA**2 - normA2 - 4.0 * g2 - 4.0 * xi * trA) * delta
    det_B = np.linalg.det(traj.B)
    return {
        "T": float(np.max(np.abs(T_dd - expected_T), initial=0.0)),
        "q": float(np.max(np.abs(q_dd - expected_q), initial=0.0)),
        "B": float(np.max(np.abs(B_dd - expected_B), initial=0.0)),
        "delta": float(np.max(np.abs(d_dd - expected_d), initial=0.0)),
        "det": float(np.max(np.abs(det_B - traj.delta), initial=0.0)),
    }


def curvature_ratios(grad, hess):
    """Closed forms ``gamma''/gamma = |g|^2`` and
    ``rho''/rho = ((tr A)^2 - d |A|^2)/d^2 + (1 - 4/d)|g|^2`` from potential jets.

    ``grad`` has shape ``(n, d)`` (or ``(d,)``) and ``hess`` ``(n, d, d)``.
    """
    g = np.atleast_2d(np.asarray(grad, dtype=float))
    A = np.asarray(hess, dtype=float).reshape(g.shape[0], g.shape[1], g.shape[1])
    d = g.shape[1]
    g2 = np.sum(g * g, axis=1)
    trA = np.trace(A, axis1=1, axis2=2)
    normA2 = np.sum(A * A, axis=(1, 2))
    return g2, (trA**2 - d * normA2) / d**2 + (1.0 - 4.0 / d) * g2


@dataclass(frozen=True)
class CurvatureReport:
    """Second-difference and closed-form samples of ``gamma''/gamma`` and
    ``rho''/rho`` along a trajectory (interior times only)."""

    times: np.ndarray
    gamma_ratio_fd: np.ndarray
    rho_ratio_fd: np.ndarray
    gamma_ratio: np.ndarray
    rho_ratio: np.ndarray
    violations: list
    max_fd_discrepancy: float

    @property
    def ok(self) -> bool:
        return not self.violations


def curvature_diagnostics(traj: Trajectory, gamma_tol: float = 1e-10, rho_tol: float = 1e-8,
                          fd_tol: float | None = None) -> CurvatureReport:
    """Check ``gamma''/gamma >= 0`` and ``rho''/rho <= (1 - 4/d) gamma''/gamma``
    (equality for ``d = 1``) with ``gamma = q`` and ``rho = q delta^(1/d)``.

    The inequalities are checked on the closed-form ratios built from the
    potential jets; the second differences of the stored trajectory must
    agree with them within ``fd_tol`` (default ``100 dt^2`` scaled).
    """
    d = traj.dimension
    dt = abs(traj.times[1] - traj.times[0])
    gamma = traj.q
    if np.any(traj.delta <= 0):
        raise VertexRegion("Jacobian determinant left the positive range")
    rho = traj.q * traj.delta ** (1.0 / d)
    g_fd = _second_difference(gamma, dt) / gamma[1:-1]
    r_fd = _second_difference(rho, dt) / rho[1:-1]
    g_exact, r_exact = curvature_ratios(traj.grad[1:-1], traj.hess[1:-1])
    factor = 1.0 - 4.0 / d
    violations = []
    worst_g = float(np.min(g_exact, initial=0.0))
    if worst_g < -gamma_tol:
        violations.append(("gamma_convexity", worst_g))
    excess = r_exact - factor * g_exact
    if d == 1:
        if np.max(np.abs(excess), initial=0.0) > rho_tol:
            violations.append(("rho_equality", float(np.max(np.abs(excess)))))
    elif np.max(excess, initial=-np.inf) > rho_tol:
        violations.append(("rho_curvature", float(np.max(excess))))
    scale = 1.0 + np.max(np.abs(np.concatenate([g_exact, r_exact])), initial=0.0)
    if fd_tol is None:
        fd_tol = max(1e-6, 100.0 * dt * dt) * scale
    disc = float(max(np.max(np.abs(g_fd - g_exact), initial=0.0), np.max(np.abs(r_fd - r_exact), initial=0.0)))
    if disc > fd_tol:
        violations.append(("finite_difference_mismatch", disc))
    return CurvatureReport(traj.times[1:-1], g_fd, r_fd, g_exact, r_exact, violations, disc)


def Z_factor(u_from: float, u_to: float, tau: float) -> float:
    """``(1 - 2 tau u_to) / (1 + 2 tau u_from)``, zero when ``u_from = +inf``.

    Along optimal chains this equals ``1 / q^2`` and is multiplicative.
    """
    if tau <= 0:
        raise DomainError("tau must be positive")
    if u_from == math.inf:
        if 1.0 - 2.0 * tau * u_to < 0:
            raise DomainError("1 - 2 tau u must be nonnegative")
        return 0.0
    den = 1.0 + 2.0 * tau * u_from
    num = 1.0 - 2.0 * tau * u_to
    if den < 0 or num < 0:
        raise DomainError("Z is defined only for 1 + 2 tau u' >= 0 and 1 - 2 tau u >= 0")
    if den == 0:
        return math.inf if num > 0 else math.nan
    return num / den
