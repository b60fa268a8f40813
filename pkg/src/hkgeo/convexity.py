"""Geodesic lambda-convexity of integral functionals ``int E(c) dx``.

With ``eps0 = E``, ``eps1 = c E'`` and ``eps2 = c^2 E''`` the functional is
geodesically convex iff, on the interior of the domain of ``E``,

    B(c) = [[eps2 - (d-1)/d (eps1 - eps0),  eps2 - (eps1 - eps0)/2],
            [eps2 - (eps1 - eps0)/2,        eps2 + eps1/2        ]]  >= 0

and ``(d-1)(eps1 - eps0) >= 0``.  Lambda-convexity is certified with
``B(c) >= diag(0, lambda c / 2)``.  In the chord form
``E(mu_t) <= (1-t) E(mu_0) + t E(mu_1) - (k/2) t (1-t) HK^2`` this
matrix level ``lambda`` corresponds to the modulus ``k = 2 lambda``
(``E(c) = c`` certifies ``lambda = 1`` and has chord modulus 2).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from .errors import (
    EmptyGrid,
    InputError,
    McCannDegenerate,
    NonpositiveParameter,
    OutsideDomain,
    RecessionInfinite,
)
from .measures import DiscreteMeasure, GridDensity

__all__ = [
    "DensityFunction",
    "ConditionVerdict",
    "ConvexityReport",
    "power",
    "negative_power",
    "boltzmann",
    "capped_linear",
    "sum_of",
    "tabulated",
    "from_callable",
    "parse_density_spec",
    "load_density_spec",
    "default_c_grid",
    "eps",
    "bbB_matrix",
    "N_E",
    "certify",
    "otto_conditions",
    "n_e_conditions",
    "monotonicity_suite",
    "lambda_opt",
    "empirical_geodesic_convexity",
    "FAILURE_PRIORITY",
]

FAILURE_PRIORITY = ("monotone", "mccann", "hellinger", "extra", "B_psd")


# ---------------------------------------------------------------------------
# density functions


@dataclass(frozen=True)
class DensityFunction:
    """A convex density ``E`` on ``[0, domain_upper]`` with ``E(0) = 0``.

    ``d1``/``d2`` are analytic derivatives when available; otherwise
    finite differences are used.  ``recession`` is ``lim E(c)/c``.
    """

    name: str
    value: Callable
    d1: Callable | None = None
    d2: Callable | None = None
    recession: float = math.inf
    domain_upper: float = math.inf
    sampled_only: bool = False
    params: dict = field(default_factory=dict)

    def __call__(self, c):
        c = np.asarray(c, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(c > self.domain_upper, np.inf, self.value(np.minimum(c, self.domain_upper)))
        return out if out.ndim else float(out)

    def __add__(self, other: "DensityFunction") -> "DensityFunction":
        return sum_of(self, other)

    def scaled(self, k: float) -> "DensityFunction":
        return DensityFunction(
            f"{k:g}*{self.name}",
            lambda c: k * self.value(c),
            None if self.d1 is None else (lambda c: k * self.d1(c)),
            None if self.d2 is None else (lambda c: k * self.d2(c)),
            k * self.recession if k != 0 else 0.0,
            self.domain_upper,
            self.sampled_only,
            {"scale": k, "base": self.params},
        )


def power(m: float) -> DensityFunction:
    """``E(c) = c^m``."""
    if not m > 0:
        raise NonpositiveParameter("exponent must be positive")
    rec = math.inf if m > 1 else (1.0 if m == 1 else 0.0)
    return DensityFunction(
        f"power(m={m:g})",
        lambda c: np.power(c, m),
        lambda c: m * np.power(c, m - 1),
        lambda c: m * (m - 1) * np.power(c, m - 2),
        rec,
        params={"family": "power", "m": m},
    )


def negative_power(q: float) -> DensityFunction:
    """``E(c) = -c^q`` for ``0 < q < 1``."""
    if not 0 < q < 1:
        raise InputError("negative_power needs 0 < q < 1")
    return DensityFunction(
        f"negative_power(q={q:g})",
        lambda c: -np.power(c, q),
        lambda c: -q * np.power(c, q - 1),
        lambda c: q * (1 - q) * np.power(c, q - 2),
        0.0,
        params={"family": "negative_power", "q": q},
    )


def _xlogx(c):
    c = np.asarray(c, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(c > 0, c * np.log(np.where(c > 0, c, 1.0)), 0.0)


def boltzmann() -> DensityFunction:
    """``E(c) = c log c``."""
    return DensityFunction(
        "boltzmann",
        _xlogx,
        lambda c: np.log(c) + 1.0,
        lambda c: 1.0 / np.asarray(c, dtype=float),
        math.inf,
        params={"family": "boltzmann"},
    )


def capped_linear(kappa: float, c_max: float = 1.0) -> DensityFunction:
    """``E(c) = kappa c`` on ``[0, c_max]``, ``+inf`` beyond."""
    if not c_max > 0:
        raise NonpositiveParameter("cap must be positive")
    return DensityFunction(
        f"capped_linear(kappa={kappa:g}, c_max={c_max:g})",
        lambda c: kappa * np.asarray(c, dtype=float),
        lambda c: np.full_like(np.asarray(c, dtype=float), kappa),
        lambda c: np.zeros_like(np.asarray(c, dtype=float)),
        math.inf,
        float(c_max),
        params={"family": "capped_linear", "kappa": kappa, "c_max": c_max},
    )


def sum_of(*parts: DensityFunction) -> DensityFunction:
    if not parts:
        raise InputError("sum_of needs at least one term")
    analytic1 = all(p.d1 is not None for p in parts)
    analytic2 = all(p.d2 is not None for p in parts)
    rec = sum(p.recession for p in parts)
    return DensityFunction(
        "+".join(p.name for p in parts),
        lambda c: sum(p.value(c) for p in parts),
        (lambda c: sum(p.d1(c) for p in parts)) if analytic1 else None,
        (lambda c: sum(p.d2(c) for p in parts)) if analytic2 else None,
        rec if not math.isnan(rec) else math.inf,
        min(p.domain_upper for p in parts),
        any(p.sampled_only for p in parts),
        {"family": "sum", "terms": [p.params for p in parts]},
    )


def tabulated(c_values, e_values) -> DensityFunction:
    """Monotone cubic (PCHIP) interpolation of sampled values; ``+inf``
    beyond the last sample.  Certification on such data is sampled only."""
    c = np.asarray(c_values, dtype=float)
    e = np.asarray(e_values, dtype=float)
    if c.ndim != 1 or c.shape != e.shape or c.shape[0] < 3:
        raise InputError("tabulated E needs at least three (c, E) samples")
    order = np.argsort(c)
    c, e = c[order], e[order]
    if np.any(np.diff(c) <= 0) or c[0] < 0:
        raise InputError("sample abscissae must be distinct and nonnegative")
    if c[0] > 0:
        c = np.concatenate([[0.0], c])
        e = np.concatenate([[0.0], e])
    interp = PchipInterpolator(c, e, extrapolate=False)
    der1, der2 = interp.derivative(1), interp.derivative(2)
    return DensityFunction(
        "tabulated",
        lambda x: interp(x),
        lambda x: der1(x),
        lambda x: der2(x),
        float(e[-1] / c[-1]),
        float(c[-1]),
        True,
        {"family": "tabulated", "n": int(c.shape[0])},
    )


def from_callable(fn: Callable, name: str = "custom", recession: float = math.inf,
                  domain_upper: float = math.inf) -> DensityFunction:
    """Wrap a vectorised callable; derivatives by finite differences."""
    return DensityFunction(name, fn, None, None, recession, domain_upper)


def parse_density_spec(spec) -> DensityFunction:
    """Build ``E`` from a mapping such as ``{"family": "power", "m": 2}``.

    Families: ``power`` (m), ``negative_power`` (q), ``boltzmann``,
    ``capped_linear`` (kappa, c_max), ``sum`` (terms) and ``tabulated``
    (c, E).  A plain string like ``"power m=2"`` is also accepted.
    """
    if isinstance(spec, str):
        words = spec.split()
        if not words:
            raise InputError("empty density specification")
        obj = {"family": words[0]}
        for w in words[1:]:
            key, _, val = w.partition("=")
            obj[key] = float(val)
        spec = obj
    if not isinstance(spec, dict) or "family" not in spec:
        raise InputError("density specification needs a 'family' entry")
    fam = spec["family"]
    try:
        if fam == "power":
            return power(float(spec["m"]))
        if fam == "negative_power":
            return negative_power(float(spec["q"]))
        if fam == "boltzmann":
            return boltzmann()
        if fam == "capped_linear":
            return capped_linear(float(spec["kappa"]), float(spec.get("c_max", 1.0)))
        if fam == "sum":
            return sum_of(*(parse_density_spec(t) for t in spec["terms"]))
        if fam == "tabulated":
            return tabulated(spec["c"], spec["E"])
    except KeyError as exc:
        raise InputError(f"missing parameter {exc} for family {fam!r}") from exc
    raise InputError(f"unknown density family {fam!r}")


def load_density_spec(path) -> DensityFunction:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = text.strip()
    return parse_density_spec(obj)


# ---------------------------------------------------------------------------
# derivative calculus


def default_c_grid(E: DensityFunction, n: int = 400) -> np.ndarray:
    """Log-spaced grid on ``[1e-6, min(c_E, 1e6)]``, kept inside a finite domain."""
    hi = min(E.domain_upper, 1e6)
    if math.isfinite(E.domain_upper):
        hi = E.domain_upper * (1.0 - 1e-6)
    lo = min(1e-6, hi * 1e-6)
    return np.geomspace(lo, hi, n)


def _check_interior(E: DensityFunction, c: np.ndarray):
    if np.any(~np.isfinite(c)) or np.any(c <= 0) or np.any(c >= E.domain_upper):
        raise OutsideDomain("c must lie in the open interior of the domain of E")


def _fd_first(E, c):
    # relative step near the cube root of machine epsilon balances truncation and rounding
    h = 6e-6 * c
    if math.isfinite(E.domain_upper):
        h = np.minimum(h, 0.25 * (E.domain_upper - c))
    return (E.value(c + h) - E.value(c - h)) / (2 * h)


def _fd_second(E, c):
    # second differences need a larger relative step than first ones to keep
    # rounding noise below the margins that enter the determinant
    h = np.minimum(1e-3 * c, 0.25 * c)
    if math.isfinite(E.domain_upper):
        h = np.minimum(h, 0.25 * (E.domain_upper - c))

    def d2(step):
        return (E.value(c + step) - 2 * E.value(c) + E.value(c - step)) / (step * step)

    return (4 * d2(0.5 * h) - d2(h)) / 3.0


def eps(E: DensityFunction, c, j: int):
    """``eps_j(c) = c^j E^(j)(c)`` for ``j`` in ``{0, 1, 2}``."""
    if j not in (0, 1, 2):
        raise InputError("j must be 0, 1 or 2")
    arr = np.asarray(c, dtype=float)
    _check_interior(E, np.atleast_1d(arr))
    if j == 0:
        out = E.value(arr)
    elif j == 1:
        out = arr * (E.d1(arr) if E.d1 is not None else _fd_first(E, arr))
    else:
        out = arr * arr * (E.d2(arr) if E.d2 is not None else _fd_second(E, arr))
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


def _eps_all(E, c):
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return (np.atleast_1d(eps(E, c, 0)), np.atleast_1d(eps(E, c, 1)), np.atleast_1d(eps(E, c, 2)))


def _bbB_from_eps(e0, e1, e2, d):
    b11 = e2 - (d - 1) / d * (e1 - e0)
    b12 = e2 - 0.5 * (e1 - e0)
    b22 = e2 + 0.5 * e1
    return b11, b12, b22


def bbB_matrix(E: DensityFunction, c, d: int) -> np.ndarray:
    """The symmetric matrix ``B(c)``; shape ``(2, 2)`` or ``(n, 2, 2)``."""
    if d < 1:
        raise InputError("dimension must be at least 1")
    scalar = np.ndim(c) == 0
    e0, e1, e2 = _eps_all(E, c)
    b11, b12, b22 = _bbB_from_eps(e0, e1, e2, d)
    out = np.stack([np.stack([b11, b12], -1), np.stack([b12, b22], -1)], -2)
    return out[0] if scalar else out


def N_E(E: DensityFunction, rho, gamma, d: int):
    """``(rho/gamma)^d E(gamma^(2+d) / rho^d)`` (``+inf`` outside the domain)."""
    rho = np.asarray(rho, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if np.any(rho <= 0) or np.any(gamma <= 0):
        raise InputError("rho and gamma must be positive")
    out = (rho / gamma) ** d * E(gamma ** (2 + d) / rho**d)
    out = np.asarray(out, dtype=float)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# certification


@dataclass(frozen=True)
class ConditionVerdict:
    passed: bool
    margin: float  # smallest value scaled by the local size of eps_j
    worst_c: float


@dataclass(frozen=True)
class ConvexityReport:
    """Per-condition verdicts of a lambda-convexity certification."""

    dimension: int
    lam: float
    verdicts: dict
    overall: bool
    failing_condition: str | None
    sampled_only: bool
    c_range: tuple
    density: str = ""

    @property
    def chord_modulus(self) -> float:
        """Modulus of the chord inequality certified by ``lam``."""
        return 2.0 * self.lam

    def to_dict(self) -> dict:
        return {
            "format": "hkgeo.convexity_report",
            "version": 1,
            "density": self.density,
            "dimension": self.dimension,
            "lambda": self.lam,
            "chord_modulus": self.chord_modulus,
            "verdict": "PASS" if self.overall else "FAIL",
            "failing_condition": self.failing_condition,
            "sampled_only": self.sampled_only,
            "c_range": list(self.c_range),
            "conditions": {
                k: {"passed": v.passed, "margin": v.margin, "worst_c": v.worst_c}
                for k, v in self.verdicts.items()
            },
        }


def _grid(E, c_grid):
    grid = default_c_grid(E) if c_grid is None else np.asarray(c_grid, dtype=float).reshape(-1)
    if grid.size == 0:
        raise EmptyGrid("the c-grid is empty")
    return grid


def _verdict(values, scale, c, tolerance) -> ConditionVerdict:
    rel = values / scale
    k = int(np.argmin(rel))
    return ConditionVerdict(bool(rel[k] >= -tolerance), float(rel[k]), float(c[k]))


def certify(E: DensityFunction, d: int, lam: float = 0.0, c_grid=None,
            tolerance: float = 1e-9) -> ConvexityReport:
    """Check ``B(c) >= diag(0, lam c/2)`` and ``(d-1)(eps1 - eps0) >= 0`` on a grid.

    Margins are divided by ``max(|eps0|, |eps1|, |eps2|, |lam| c)`` at each
    ``c`` so that ``tolerance`` is relative.  The McCann, Hellinger and extra
    conditions are necessary consequences reported separately; the first
    failing condition in :data:`FAILURE_PRIORITY` is named in the report.
    """
    if d < 1:
        raise InputError("dimension must be at least 1")
    c = _grid(E, c_grid)
    e0, e1, e2 = _eps_all(E, c)
    b11, b12, b22 = _bbB_from_eps(e0, e1, e2, d)
    shift = 0.5 * lam * c
    b22s = b22 - shift
    scale = np.maximum.reduce([np.abs(e0), np.abs(e1), np.abs(e2), np.abs(lam) * c, np.full_like(c, 1e-300)])
    # smallest eigenvalue of the shifted symmetric 2x2 matrix
    mean = 0.5 * (b11 + b22s)
    rad = np.hypot(0.5 * (b11 - b22s), b12)
    min_eig = mean - rad
    verdicts = {
        "monotone": _verdict((d - 1) * (e1 - e0), scale, c, tolerance),
        "mccann": _verdict(b11, scale, c, tolerance),
        "hellinger": _verdict(b22s, scale, c, tolerance),
        "extra": _verdict((d + 2) * e1 - 2 * e0 - d * lam * c, scale, c, tolerance),
        "B_psd": _verdict(min_eig, scale, c, tolerance),
    }
    overall = verdicts["B_psd"].passed and verdicts["monotone"].passed
    failing = None
    if not overall:
        failing = next(k for k in FAILURE_PRIORITY if not verdicts[k].passed)
    return ConvexityReport(int(d), float(lam), verdicts, bool(overall), failing, E.sampled_only,
                           (float(c[0]), float(c[-1])), E.name)


def otto_conditions(E: DensityFunction, d: int, lam: float = 0.0, beta: float = 4.0, c_grid=None,
                    tolerance: float = 1e-9) -> dict:
    """Conditions from the Onsager-operator calculus: ``(d-1)H >= 0``,
    ``B1 >= lam c / beta`` and ``[[A - (d-1)/d H, B2/2], [B2/2, B3 - lam c/beta]] >= 0``
    with ``A = eps2``, ``H = eps1 - eps0``, ``B1 = 3/2 eps1 - eps0``,
    ``B2 = -2 eps2 + eps1 - eps0`` and ``B3 = eps2 + eps1/2``."""
    c = _grid(E, c_grid)
    e0, e1, e2 = _eps_all(E, c)
    H = e1 - e0
    B1 = 1.5 * e1 - e0
    B2 = -2 * e2 + e1 - e0
    B3 = e2 + 0.5 * e1
    m11 = e2 - (d - 1) / d * H
    m22 = B3 - lam * c / beta
    m12 = 0.5 * B2
    scale = np.maximum.reduce([np.abs(e0), np.abs(e1), np.abs(e2), np.abs(lam) * c, np.full_like(c, 1e-300)])
    min_eig = 0.5 * (m11 + m22) - np.hypot(0.5 * (m11 - m22), m12)
    return {
        "monotone": _verdict((d - 1) * H, scale, c, tolerance),
        "middle": _verdict(B1 - lam * c / beta, scale, c, tolerance),
        "matrix": _verdict(min_eig, scale, c, tolerance),
    }


def n_e_conditions(E: DensityFunction, d: int, c_grid=None, tolerance: float = 1e-6,
                   step: float = 1e-3, n_midpoint: int = 200, seed: int = 0) -> dict:
    """Geodesic-convexity conditions checked directly on ``N_E``.

    Joint convexity is tested with finite-difference Hessians at points
    ``(rho, gamma)`` with ``gamma^(d+2)/rho^d`` on the c-grid, plus random
    midpoint inequalities; ``rho -> (d-1) N_E`` must be non-increasing.
    """
    c = _grid(E, c_grid)
    rng = np.random.default_rng(seed)
    gamma = np.ones_like(c)
    rho = c ** (-1.0 / d)
    f = lambda r, g: N_E(E, r, g, d)  # noqa: E731
    hr, hg = step * rho, step * gamma
    f00 = f(rho, gamma)
    frr = (f(rho + hr, gamma) - 2 * f00 + f(rho - hr, gamma)) / hr**2
    fgg = (f(rho, gamma + hg) - 2 * f00 + f(rho, gamma - hg)) / hg**2
    frg = (f(rho + hr, gamma + hg) - f(rho + hr, gamma - hg) - f(rho - hr, gamma + hg)
           + f(rho - hr, gamma - hg)) / (4 * hr * hg)
    # normalise to the scale-invariant matrix diag(rho, gamma) D^2N diag(rho, gamma)
    a, b, cc = frr * rho**2, frg * rho * gamma, fgg * gamma**2
    scale = np.maximum.reduce([np.abs(a), np.abs(b), np.abs(cc), np.abs(f00), np.full_like(c, 1e-300)])
    min_eig = 0.5 * (a + cc) - np.hypot(0.5 * (a - cc), b)
    hess_ok = bool(np.all(min_eig / scale >= -tolerance))
    fr = (f(rho + hr, gamma) - f(rho - hr, gamma)) / (2 * hr) * rho
    mono_ok = bool(d == 1 or np.all(fr / scale <= tolerance))
    # random midpoint tests between points whose c values lie in the grid range
    lo, hi = math.log(c[0]), math.log(c[-1])
    mid_ok = True
    for _ in range(n_midpoint):
        g1, g2 = np.exp(rng.uniform(-1, 1, 2))
        c1, c2 = np.exp(rng.uniform(lo, hi, 2))
        r1, r2 = (g1 ** (d + 2) / c1) ** (1 / d), (g2 ** (d + 2) / c2) ** (1 / d)
        rm, gm = 0.5 * (r1 + r2), 0.5 * (g1 + g2)
        cm = gm ** (d + 2) / rm**d
        if not (c[0] <= cm <= c[-1]):
            continue
        v1, v2, vm = f(r1, g1), f(r2, g2), f(rm, gm)
        sc = max(abs(v1), abs(v2), abs(vm), 1e-300)
        if vm > 0.5 * (v1 + v2) + tolerance * sc:
            mid_ok = False
            break
    return {"convex": hess_ok and mid_ok, "hessian": hess_ok, "midpoint": mid_ok, "monotone": mono_ok,
            "overall": hess_ok and mid_ok and mono_ok}


def monotonicity_suite(E: DensityFunction, d: int, c_grid=None, tolerance: float = 1e-9,
                       n_samples: int = 200, seed: int = 0) -> dict:
    """Three equivalent forms of the necessary monotonicity property:

    (A) ``c -> c^(-2/(d+2)) E(c)`` non-decreasing on the c-grid;
    (B) ``(1 - 4/d^2) rho dN/drho + gamma dN/dgamma >= 0`` at random points;
    (C) ``s -> N_E(s^(1 - 4/d^2) rho, s gamma)`` non-decreasing on sampled ``s``.
    """
    c = _grid(E, c_grid)
    rng = np.random.default_rng(seed)
    vals = c ** (-2.0 / (d + 2)) * np.asarray(E(c), dtype=float)
    diffs = np.diff(vals)
    scale_a = np.maximum(np.abs(vals[1:]), np.abs(vals[:-1])) + 1e-300
    a_ok = bool(np.all(diffs / scale_a >= -tolerance))
    k = 1.0 - 4.0 / d**2
    lo, hi = math.log(c[0]), math.log(c[-1])
    cs = np.exp(rng.uniform(lo + 0.01, hi - 0.01, n_samples))
    gam = np.exp(rng.uniform(-1, 1, n_samples))
    rho = (gam ** (d + 2) / cs) ** (1.0 / d)
    h = 1e-6
    dr = (N_E(E, rho * (1 + h), gam, d) - N_E(E, rho * (1 - h), gam, d)) / (2 * h)
    dg = (N_E(E, rho, gam * (1 + h), d) - N_E(E, rho, gam * (1 - h), d)) / (2 * h)
    expr = k * dr + dg
    scale_b = np.abs(k * dr) + np.abs(dg) + np.abs(N_E(E, rho, gam, d)) + 1e-300
    b_ok = bool(np.all(expr / scale_b >= -1e-6))
    c_ok = True
    svals = np.geomspace(0.5, 2.0, 41)
    for r, g in zip(rho[:50], gam[:50]):
        rr = svals ** k * r
        gg = svals * g
        cc = gg ** (d + 2) / rr**d
        inside = (cc >= c[0]) & (cc <= c[-1])
        if inside.sum() < 2:
            continue
        n = np.asarray(N_E(E, rr[inside], gg[inside], d))
        sc = np.max(np.abs(n)) + 1e-300
        if np.any(np.diff(n) / sc < -tolerance):
            c_ok = False
            break
    return {"A": a_ok, "B": b_ok, "C": c_ok, "agree": a_ok == b_ok == c_ok}


def lambda_opt(E: DensityFunction, d: int, c_grid=None, tolerance: float = 1e-12):
    """``inf_c 2 det B(c) / (c B11(c))`` by grid search refined with a bounded
    scalar minimisation in ``log c``.  Returns ``(lambda, c_star)``."""
    c = _grid(E, c_grid)

    def ell(cv):
        e0, e1, e2 = _eps_all(E, cv)
        b11, b12, b22 = _bbB_from_eps(e0, e1, e2, d)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = 2.0 * (b11 * b22 - b12 * b12) / (cv * b11)
        return ratio, b11, np.maximum.reduce([np.abs(e0), np.abs(e1), np.abs(e2)])

    vals, b11, scale = ell(c)
    if np.any(b11 <= tolerance * scale):
        k = int(np.argmin(b11 / scale))
        raise McCannDegenerate(f"B11 is not strictly positive (c = {c[k]:.3e})")
    k = int(np.argmin(vals))
    lo = math.log(c[max(k - 1, 0)])
    hi = math.log(c[min(k + 1, c.size - 1)])
    if hi <= lo:
        return float(vals[k]), float(c[k])
    res = minimize_scalar(lambda u: float(ell(np.array([math.exp(u)]))[0][0]), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-10})
    if res.fun < vals[k]:
        return float(res.fun), float(math.exp(res.x))
    return float(vals[k]), float(c[k])


# ---------------------------------------------------------------------------
# empirical chord test


def _energy_grid(E: DensityFunction, g: GridDensity) -> float:
    vals = np.asarray(E(g.values), dtype=float)
    return float(np.sum(vals * g.cell_weights()))


def _singular_energy(E: DensityFunction, mu: DiscreteMeasure) -> float:
    mass = mu.total_mass()
    if mass == 0:
        return 0.0
    if not math.isfinite(E.recession):
        raise RecessionInfinite("singular mass with infinite recession constant: the functional is +inf")
    return E.recession * mass


def empirical_geodesic_convexity(E: DensityFunction, mu0, mu1=None, lam: float = 0.0, n_times: int = 21):
    """Largest violation of ``E(mu_t) <= (1-t)E(mu0) + t E(mu1) - (lam/2) t(1-t) HK^2``.

    ``lam`` is the chord modulus.  Supported inputs:

    * a ``FlowContext`` (``mu1`` unused): the geodesic given by the
      characteristic flow of ``xi_s``, evaluated between times 0 and 1;
    * two grid densities, one of them identically zero (pure growth or decay);
    * two discrete measures: the energy is the recession constant times mass.

    Returns ``(max_violation, profile)`` with the sampled energies and chord.
    """
    from .geodesics import FlowContext, build_geodesic, density_along_flow, sample

    times = np.linspace(0.0, 1.0, n_times)
    if isinstance(mu0, FlowContext):
        ctx = mu0
        dens = [density_along_flow(ctx, float(t)) for t in times]
        energy = np.array([float(np.sum(np.asarray(E(td.values)) * td.delta * td.source_weights)) for td in dens])
        m_s = ctx.density.values.reshape(-1)[ctx.active()] * ctx.density.cell_weights().reshape(-1)[ctx.active()]
        qa, qb = np.sqrt(dens[0].alpha), np.sqrt(dens[-1].alpha)
        sep = np.linalg.norm(dens[-1].positions - dens[0].positions, axis=1)
        hk2 = float(np.sum(m_s * (qa**2 + qb**2 - 2 * qa * qb * np.cos(np.minimum(sep, 0.5 * np.pi)))))
    elif isinstance(mu0, GridDensity) and isinstance(mu1, GridDensity):
        z0, z1 = mu0.total_mass() == 0, mu1.total_mass() == 0
        if not (z0 or z1):
            raise InputError("grid endpoints are supported when one side vanishes; use a FlowContext otherwise")
        if z0:
            energy = np.array([_energy_grid(E, mu1.with_values(t * t * mu1.values)) for t in times])
            hk2 = mu1.total_mass()
        else:
            energy = np.array([_energy_grid(E, mu0.with_values((1 - t) ** 2 * mu0.values)) for t in times])
            hk2 = mu0.total_mass()
    elif isinstance(mu0, DiscreteMeasure) and isinstance(mu1, DiscreteMeasure):
        curve = build_geodesic(mu0, mu1)
        energy = np.array([_singular_energy(E, sample(curve, float(t))) for t in times])
        hk2 = curve.hk_squared
    else:
        raise InputError("unsupported endpoint types")
    chord = (1 - times) * energy[0] + times * energy[-1] - 0.5 * lam * times * (1 - times) * hk2
    violation = energy - chord
    profile = {"times": times, "energy": energy, "chord": chord, "hk_squared": hk2}
    return float(np.max(violation)), profile
