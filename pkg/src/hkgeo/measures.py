"""Finite measures on R^d, support decomposition at the pi/2 threshold,
parameter rescaling and grid densities.

File formats
------------
Measure file (JSON)::

    {"format": "hkgeo.measure", "version": 1, "dimension": 2,
     "atoms": [{"x": [0.0, 0.0], "mass": 1.0}, ...]}

Grid file (JSON)::

    {"format": "hkgeo.grid", "version": 1, "box": [[lo, hi], ...],
     "spacing": [h, ...], "values": [...]}   # flat, row-major

Infinite grid values are written as the strings ``"inf"`` and ``"-inf"``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DimensionMismatch, InputError, NonpositiveParameter

HALF_PI = 0.5 * np.pi

__all__ = [
    "DiscreteMeasure",
    "GridDensity",
    "SupportDecomposition",
    "Reducedness",
    "decompose_supports",
    "is_reduced",
    "rescale_to_canonical",
    "rescale_from_canonical",
    "grid_to_measure",
    "load_measure",
    "save_measure",
    "measure_to_dict",
    "measure_from_dict",
    "load_grid",
    "save_grid",
    "grid_to_dict",
    "grid_from_dict",
]


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


class DiscreteMeasure:
    """A finite sum of weighted Dirac masses in R^d.

    Zero-mass atoms are dropped on construction; negative or non-finite
    masses are rejected.
    """

    __slots__ = ("positions", "masses")

    def __init__(self, positions, masses, dimension: int | None = None):
        masses = np.asarray(masses, dtype=float).reshape(-1)
        positions = np.asarray(positions, dtype=float)
        if positions.size == 0:
            if dimension is None:
                if positions.ndim == 2:
                    dimension = positions.shape[1]
                else:
                    raise InputError("dimension is required for an empty measure")
            positions = positions.reshape(0, dimension)
        elif positions.ndim == 1:
            positions = positions.reshape(-1, 1) if dimension in (None, 1) else positions.reshape(1, -1)
        if positions.ndim != 2:
            raise InputError("positions must be a 2-D array (atoms x dimension)")
        if dimension is not None and positions.shape[1] != dimension:
            raise DimensionMismatch(
                f"positions have dimension {positions.shape[1]}, expected {dimension}"
            )
        if positions.shape[0] != masses.shape[0]:
            raise InputError("positions and masses have different lengths")
        if not np.all(np.isfinite(positions)):
            raise InputError("positions must be finite")
        if not np.all(np.isfinite(masses)) or np.any(masses < 0):
            raise InputError("masses must be finite and nonnegative")
        keep = masses > 0
        object.__setattr__(self, "positions", _readonly(positions[keep]))
        object.__setattr__(self, "masses", _readonly(masses[keep]))

    def __setattr__(self, name, value):
        raise AttributeError("DiscreteMeasure is immutable")

    # construction helpers -------------------------------------------------
    @classmethod
    def empty(cls, dimension: int) -> "DiscreteMeasure":
        return cls(np.zeros((0, dimension)), np.zeros(0), dimension)

    @classmethod
    def dirac(cls, x, mass: float = 1.0) -> "DiscreteMeasure":
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x.reshape(1, -1), [mass])

    @classmethod
    def from_atoms(cls, atoms, dimension: int | None = None) -> "DiscreteMeasure":
        atoms = list(atoms)
        if not atoms:
            if dimension is None:
                raise InputError("dimension is required for an empty measure")
            return cls.empty(dimension)
        xs = [np.atleast_1d(np.asarray(x, dtype=float)) for x, _ in atoms]
        return cls(np.vstack(xs), [m for _, m in atoms], dimension)

    # basic properties -----------------------------------------------------
    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.masses.shape[0]

    def __len__(self) -> int:
        return self.n_atoms

    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    def is_empty(self) -> bool:
        return self.n_atoms == 0

    def __iter__(self):
        return iter(zip(self.positions, self.masses))

    def __repr__(self) -> str:
        return f"DiscreteMeasure(n_atoms={self.n_atoms}, dimension={self.dimension}, mass={self.total_mass():.6g})"

    # algebra --------------------------------------------------------------
    def __add__(self, other: "DiscreteMeasure") -> "DiscreteMeasure":
        if other.dimension != self.dimension:
            raise DimensionMismatch("cannot add measures of different dimension")
        return DiscreteMeasure(
            np.vstack([self.positions, other.positions]),
            np.concatenate([self.masses, other.masses]),
            self.dimension,
        )

    def scaled(self, factor: float) -> "DiscreteMeasure":
        return DiscreteMeasure(self.positions, self.masses * factor, self.dimension)

    def restrict(self, indices) -> "DiscreteMeasure":
        idx = np.asarray(indices, dtype=int)
        return DiscreteMeasure(self.positions[idx], self.masses[idx], self.dimension)

    def map_positions(self, fn) -> "DiscreteMeasure":
        return DiscreteMeasure(fn(self.positions), self.masses, self.dimension)

    def merged(self, quantum: float | None = None) -> "DiscreteMeasure":
        """Merge atoms at identical coordinates.

        With ``quantum`` set, coordinates are first rounded to that lattice.
        The result is sorted lexicographically by position.
        """
        if self.n_atoms == 0:
            return self
        pos = self.positions
        if quantum is not None:
            if quantum <= 0:
                raise NonpositiveParameter("quantum must be positive")
            pos = np.round(pos / quantum) * quantum
        uniq, inverse = np.unique(pos, axis=0, return_inverse=True)
        masses = np.zeros(uniq.shape[0])
        np.add.at(masses, inverse.reshape(-1), self.masses)
        return DiscreteMeasure(uniq, masses, self.dimension)

    def tv_distance(self, other: "DiscreteMeasure", quantum: float | None = None) -> float:
        """Total-variation distance after merging both measures."""
        if other.dimension != self.dimension:
            raise DimensionMismatch("dimension mismatch")
        a = self.merged(quantum)
        b = other.merged(quantum)
        pos = np.vstack([a.positions, b.positions])
        if quantum is not None:
            pos = np.round(pos / quantum) * quantum
        signed = np.concatenate([a.masses, -b.masses])
        if pos.shape[0] == 0:
            return 0.0
        uniq, inverse = np.unique(pos, axis=0, return_inverse=True)
        acc = np.zeros(uniq.shape[0])
        np.add.at(acc, inverse.reshape(-1), signed)
        return float(np.sum(np.abs(acc)))

    def allclose(self, other: "DiscreteMeasure", threshold: float = 1e-12, quantum=None) -> bool:
        return self.tv_distance(other, quantum) <= threshold


@dataclass(frozen=True)
class GridDensity:
    """Nonnegative density sampled on a regular lattice over an axis-aligned box.

    ``values`` has one axis per spatial dimension, with node ``k`` along
    axis ``i`` located at ``box[i][0] + k * spacing[i]``.
    """

    box: np.ndarray
    spacing: np.ndarray
    values: np.ndarray
    allow_negative: bool = field(default=False, repr=False)

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        spacing = np.asarray(self.spacing, dtype=float).reshape(-1)
        values = np.asarray(self.values, dtype=float)
        d = box.shape[0]
        if spacing.shape[0] == 1 and d > 1:
            spacing = np.repeat(spacing, d)
        if spacing.shape[0] != d:
            raise DimensionMismatch("spacing must have one entry per axis")
        if np.any(spacing <= 0):
            raise NonpositiveParameter("spacing must be positive")
        if np.any(box[:, 1] < box[:, 0]):
            raise InputError("box bounds must satisfy lo <= hi")
        shape = tuple(int(round((hi - lo) / h)) + 1 for (lo, hi), h in zip(box, spacing))
        if values.ndim == 1 and d > 1 and values.size == int(np.prod(shape)):
            values = values.reshape(shape)
        if values.ndim == 0 or values.shape != shape:
            if values.size == int(np.prod(shape)):
                values = values.reshape(shape)
            else:
                raise InputError(f"values shape {values.shape} does not match lattice {shape}")
        if not self.allow_negative and np.any(values < 0):
            raise InputError("density values must be nonnegative")
        object.__setattr__(self, "box", _readonly(box))
        object.__setattr__(self, "spacing", _readonly(spacing))
        object.__setattr__(self, "values", _readonly(values))

    @property
    def dimension(self) -> int:
        return self.box.shape[0]

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def axes(self) -> list:
        return [lo + h * np.arange(n) for (lo, _), h, n in zip(self.box, self.spacing, self.shape)]

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (N, d), in row-major order."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def cell_weights(self) -> np.ndarray:
        """Product trapezoid quadrature weights, same shape as ``values``."""
        w = np.ones(self.shape)
        for axis, (h, n) in enumerate(zip(self.spacing, self.shape)):
            wa = np.full(n, h)
            if n > 1:
                wa[0] = wa[-1] = 0.5 * h
            shape = [1] * self.dimension
            shape[axis] = n
            w = w * wa.reshape(shape)
        return w

    def total_mass(self) -> float:
        return float(np.sum(self.values * self.cell_weights()))

    def with_values(self, values) -> "GridDensity":
        return GridDensity(self.box, self.spacing, values)


@dataclass(frozen=True)
class SupportDecomposition:
    """Partition of each side's atoms into those within pi/2 of the other
    support (``near``) and the rest (``far``)."""

    near0: np.ndarray
    far0: np.ndarray
    near1: np.ndarray
    far1: np.ndarray
    near_mass0: float
    far_mass0: float
    near_mass1: float
    far_mass1: float
    min_distance0: np.ndarray
    min_distance1: np.ndarray

    def swapped(self) -> "SupportDecomposition":
        return SupportDecomposition(
            self.near1, self.far1, self.near0, self.far0,
            self.near_mass1, self.far_mass1, self.near_mass0, self.far_mass0,
            self.min_distance1, self.min_distance0,
        )


class Reducedness(str, enum.Enum):
    REDUCED = "reduced"
    STRONGLY_REDUCED = "strongly_reduced"
    NOT_REDUCED = "not_reduced"


def _check_dims(mu0: DiscreteMeasure, mu1: DiscreteMeasure):
    if mu0.dimension != mu1.dimension:
        raise DimensionMismatch(
            f"measures live in different dimensions ({mu0.dimension} vs {mu1.dimension})"
        )


def pairwise_distances(x0: np.ndarray, x1: np.ndarray) -> np.ndarray:
    if x0.shape[0] == 0 or x1.shape[0] == 0:
        return np.zeros((x0.shape[0], x1.shape[0]))
    return cdist(x0, x1)


def decompose_supports(mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> SupportDecomposition:
    """Split each side into atoms strictly closer than pi/2 to the other support
    and the remaining (far) atoms."""
    _check_dims(mu0, mu1)
    dist = pairwise_distances(mu0.positions, mu1.positions)
    d0 = dist.min(axis=1) if dist.shape[1] else np.full(mu0.n_atoms, np.inf)
    d1 = dist.min(axis=0) if dist.shape[0] else np.full(mu1.n_atoms, np.inf)
    near0 = d0 < HALF_PI
    near1 = d1 < HALF_PI
    return SupportDecomposition(
        near0=np.flatnonzero(near0),
        far0=np.flatnonzero(~near0),
        near1=np.flatnonzero(near1),
        far1=np.flatnonzero(~near1),
        near_mass0=float(np.sum(mu0.masses[near0])),
        far_mass0=float(np.sum(mu0.masses[~near0])),
        near_mass1=float(np.sum(mu1.masses[near1])),
        far_mass1=float(np.sum(mu1.masses[~near1])),
        min_distance0=d0,
        min_distance1=d1,
    )


def is_reduced(mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> Reducedness:
    """Classify a pair: for atom lists, reduced already implies strongly reduced
    because the minimal distance over finitely many atoms is attained."""
    dec = decompose_supports(mu0, mu1)
    if dec.far0.size or dec.far1.size:
        return Reducedness.NOT_REDUCED
    return Reducedness.STRONGLY_REDUCED


def _scale_parameter(alpha: float, beta: float) -> float:
    if not (alpha > 0 and beta > 0):
        raise NonpositiveParameter("alpha and beta must be positive")
    return float(np.sqrt(4.0 * alpha / beta))


def rescale_to_canonical(alpha: float, beta: float, mu: DiscreteMeasure):
    """Map a measure for HK_{alpha,beta} to the canonical HK_{1,4} setting.

    Returns the measure with positions divided by ``sqrt(4 alpha / beta)``
    and the factor ``4 / beta`` by which canonical squared distances must be
    multiplied.
    """
    lam = _scale_parameter(alpha, beta)
    return mu.map_positions(lambda x: x / lam), 4.0 / beta


def rescale_from_canonical(alpha: float, beta: float, mu: DiscreteMeasure) -> DiscreteMeasure:
    lam = _scale_parameter(alpha, beta)
    return mu.map_positions(lambda x: x * lam)


def grid_to_measure(g: GridDensity) -> DiscreteMeasure:
    """One atom per node carrying value times trapezoid cell weight."""
    masses = (g.values * g.cell_weights()).reshape(-1)
    return DiscreteMeasure(g.nodes(), masses, g.dimension)


# ---------------------------------------------------------------------------
# file formats

MEASURE_FORMAT = "hkgeo.measure"
GRID_FORMAT = "hkgeo.grid"
FORMAT_VERSION = 1


def measure_to_dict(mu: DiscreteMeasure) -> dict:
    return {
        "format": MEASURE_FORMAT,
        "version": FORMAT_VERSION,
        "dimension": mu.dimension,
        "atoms": [{"x": [float(v) for v in x], "mass": float(m)} for x, m in mu],
    }


def measure_from_dict(obj: dict) -> DiscreteMeasure:
    try:
        dim = int(obj["dimension"])
        atoms = obj["atoms"]
        xs = [np.asarray(a["x"], dtype=float).reshape(-1) for a in atoms]
        ms = [float(a["mass"]) for a in atoms]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed measure object: {exc}") from exc
    if dim <= 0:
        raise InputError("dimension must be a positive integer")
    if any(m <= 0 for m in ms):
        raise InputError("atom masses must be positive")
    if not xs:
        return DiscreteMeasure.empty(dim)
    if any(x.shape[0] != dim for x in xs):
        raise DimensionMismatch("atom coordinates do not match the declared dimension")
    return DiscreteMeasure(np.vstack(xs), ms, dim)


def _decode_number(v):
    if isinstance(v, str):
        key = v.strip().lower()
        if key in ("inf", "+inf", "infinity", "+infinity"):
            return np.inf
        if key in ("-inf", "-infinity"):
            return -np.inf
        raise InputError(f"unrecognised numeric token {v!r}")
    if v is None:
        raise InputError("null is not a valid grid value")
    return float(v)


def _encode_number(v: float):
    if np.isposinf(v):
        return "inf"
    if np.isneginf(v):
        return "-inf"
    return float(v)


def grid_to_dict(box, spacing, values) -> dict:
    values = np.asarray(values, dtype=float)
    return {
        "format": GRID_FORMAT,
        "version": FORMAT_VERSION,
        "box": [[float(lo), float(hi)] for lo, hi in np.asarray(box).reshape(-1, 2)],
        "spacing": [float(h) for h in np.asarray(spacing).reshape(-1)],
        "values": [_encode_number(v) for v in values.reshape(-1)],
    }


def grid_from_dict(obj: dict):
    """Return ``(box, spacing, values)`` with values reshaped to the lattice."""
    try:
        box = np.asarray(obj["box"], dtype=float).reshape(-1, 2)
        spacing = np.asarray(obj["spacing"], dtype=float).reshape(-1)
        values = np.asarray([_decode_number(v) for v in obj["values"]], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed grid object: {exc}") from exc
    if spacing.shape[0] != box.shape[0] or np.any(spacing <= 0):
        raise InputError("spacing must be positive with one entry per axis")
    shape = tuple(int(round((hi - lo) / h)) + 1 for (lo, hi), h in zip(box, spacing))
    if values.size != int(np.prod(shape)):
        raise InputError(f"grid has {values.size} values, lattice needs {int(np.prod(shape))}")
    return box, spacing, values.reshape(shape)


def _read_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc


def load_measure(path) -> DiscreteMeasure:
    return measure_from_dict(_read_json(path))


def save_measure(mu: DiscreteMeasure, path) -> None:
    from .serialization import dump_json

    Path(path).write_text(dump_json(measure_to_dict(mu)), encoding="utf-8")


def load_grid(path):
    return grid_from_dict(_read_json(path))


def save_grid(box, spacing, values, path) -> None:
    from .serialization import dump_json

    Path(path).write_text(dump_json(grid_to_dict(box, spacing, values)), encoding="utf-8")
