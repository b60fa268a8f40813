"""Primitives on the cone over R^d: truncated cone metric, cone geodesics,
homogeneous projection, dilation-transport actions and the Monge cost."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .errors import DegenerateGeodesic, InputError
from .measures import DiscreteMeasure

HALF_PI = 0.5 * np.pi

__all__ = [
    "ConePoint",
    "DilationTransportPair",
    "radial_map",
    "arctan_vec",
    "sin_vec",
    "tan_vec",
    "truncated_cos",
    "cone_distance",
    "cone_geodesic",
    "homogeneous_projection",
    "dilation_transport_apply",
    "monge_cost",
]


def radial_map(f: Callable, v) -> np.ndarray:
    """Apply a scalar odd-type function radially: ``f(|v|) v / |v|``, zero at the origin.

    Works on a single vector (shape ``(d,)``) or a stack (shape ``(n, d)``).
    """
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, f(norm) * v / safe, 0.0)


def arctan_vec(v) -> np.ndarray:
    return radial_map(np.arctan, v)


def sin_vec(v) -> np.ndarray:
    return radial_map(np.sin, v)


def tan_vec(v) -> np.ndarray:
    return radial_map(np.tan, v)


def truncated_cos(r, cutoff: float = HALF_PI):
    """``cos(min(cutoff, r))``; with the default cutoff this is ``cos`` clipped at zero."""
    return np.cos(np.minimum(cutoff, np.asarray(r, dtype=float)))


@dataclass(frozen=True, eq=False)
class ConePoint:
    """A point ``[x, r]`` of the cone; all points with ``r == 0`` are the vertex."""

    x: tuple
    r: float

    def __post_init__(self):
        x = tuple(float(v) for v in np.atleast_1d(np.asarray(self.x, dtype=float)))
        r = float(self.r)
        if not np.isfinite(r) or r < 0:
            raise InputError("cone radius must be finite and nonnegative")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "r", r)

    @classmethod
    def vertex(cls, dimension: int) -> "ConePoint":
        return cls((0.0,) * dimension, 0.0)

    @property
    def is_vertex(self) -> bool:
        return self.r == 0.0

    @property
    def position(self) -> np.ndarray:
        return np.asarray(self.x)

    @property
    def dimension(self) -> int:
        return len(self.x)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConePoint):
            return NotImplemented
        if self.is_vertex or other.is_vertex:
            return self.is_vertex and other.is_vertex
        return self.r == other.r and self.x == other.x

    def __hash__(self) -> int:
        return hash(("vertex",)) if self.is_vertex else hash((self.x, self.r))

    def __repr__(self) -> str:
        if self.is_vertex:
            return "ConePoint(vertex)"
        return f"ConePoint(x={list(self.x)}, r={self.r!r})"


def cone_distance(a: ConePoint, b: ConePoint, cutoff: float = np.pi) -> float:
    """Cone metric ``sqrt(ra^2 + rb^2 - 2 ra rb cos(min(cutoff, |xa - xb|)))``."""
    if not (0 < cutoff <= np.pi):
        raise InputError("cutoff must lie in (0, pi]")
    sep = float(np.linalg.norm(a.position - b.position)) if a.dimension == b.dimension else None
    if sep is None:
        raise InputError("cone points live over different dimensions")
    val = a.r**2 + b.r**2 - 2.0 * a.r * b.r * np.cos(min(cutoff, sep))
    return float(np.sqrt(max(val, 0.0)))


def cone_geodesic(a: ConePoint, b: ConePoint, t: float) -> ConePoint:
    """Point at parameter ``t`` on the constant-speed cone geodesic from ``a`` to ``b``.

    Positive radii separated by pi/2 or more are rejected: such pairs never
    occur in optimal HK plans.
    """
    if not (0.0 <= t <= 1.0):
        raise InputError("t must lie in [0, 1]")
    if a.is_vertex and b.is_vertex:
        return ConePoint(a.x, 0.0)
    if a.is_vertex:
        return ConePoint(b.x, t * b.r)
    if b.is_vertex:
        return ConePoint(a.x, (1.0 - t) * a.r)
    delta = b.position - a.position
    sep = float(np.linalg.norm(delta))
    if sep >= HALF_PI:
        raise DegenerateGeodesic(
            f"points at separation {sep:.6g} >= pi/2 with positive radii"
        )
    ratio = b.r / a.r
    u = ratio * np.cos(sep) - 1.0
    v = ratio * sin_vec(delta)
    base = 1.0 + t * u
    r_t = a.r * np.sqrt(base**2 + t**2 * float(v @ v))
    x_t = a.position + arctan_vec(t * v / base)
    return ConePoint(x_t, r_t)


def homogeneous_projection(lifted: Iterable, dimension: int | None = None) -> DiscreteMeasure:
    """Project weighted cone points ``(ConePoint, weight)`` to ``sum w r^2 delta_x``.

    Vertex atoms contribute nothing; coincident positions are merged.
    """
    xs, ms = [], []
    for point, weight in lifted:
        if dimension is None:
            dimension = point.dimension
        if point.is_vertex or weight == 0:
            continue
        xs.append(point.position)
        ms.append(weight * point.r**2)
    if dimension is None:
        raise InputError("dimension is required for an empty lifted measure")
    if not xs:
        return DiscreteMeasure.empty(dimension)
    return DiscreteMeasure(np.vstack(xs), ms, dimension).merged()


@dataclass(frozen=True)
class DilationTransportPair:
    """A transport map ``T`` and a dilation ``q >= 0``, acting by
    ``(T, q) * nu = T_# (q^2 nu)``.

    Both callables take an array of points of shape ``(n, d)``; ``T`` returns
    ``(n, d)`` and ``q`` returns ``(n,)``.
    """

    T: Callable[[np.ndarray], np.ndarray]
    q: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def identity(cls) -> "DilationTransportPair":
        return cls(lambda x: np.array(x, dtype=float), lambda x: np.ones(np.shape(x)[0]))

    def then(self, other: "DilationTransportPair") -> "DilationTransportPair":
        """The pair obtained by applying ``self`` first and ``other`` second."""
        first, second = self, other

        def T(x):
            return second.T(first.T(x))

        def q(x):
            return second.q(first.T(x)) * first.q(x)

        return DilationTransportPair(T, q)

    def evaluate(self, x) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        T = np.asarray(self.T(x), dtype=float).reshape(x.shape)
        q = np.asarray(self.q(x), dtype=float).reshape(-1)
        if np.any(q < 0):
            raise InputError("dilation factor q must be nonnegative")
        return T, q


def dilation_transport_apply(pair: DilationTransportPair, nu: DiscreteMeasure, merge: bool = True) -> DiscreteMeasure:
    """Push ``nu`` forward: atom ``(x, m)`` becomes ``(T(x), q(x)^2 m)``."""
    if nu.is_empty():
        return nu
    T, q = pair.evaluate(nu.positions)
    out = DiscreteMeasure(T, q**2 * nu.masses, nu.dimension)
    return out.merged() if merge else out


def monge_cost(pair: DilationTransportPair, mu0: DiscreteMeasure) -> float:
    """``sum m (1 + q^2 - 2 q cos_{pi/2}|T(x) - x|)``, an upper bound for HK^2."""
    if mu0.is_empty():
        return 0.0
    T, q = pair.evaluate(mu0.positions)
    sep = np.linalg.norm(T - mu0.positions, axis=1)
    return float(np.sum(mu0.masses * (1.0 + q**2 - 2.0 * q * truncated_cos(sep))))
