"""Shared helpers: independent reference computations and random instances."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from hkgeo import DiscreteMeasure

FIXTURES = Path(__file__).parent / "fixtures"


def let_reference(mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> float:
    """LET minimum by projected quasi-Newton over the plan weights.

    Shares no code with the package: a generic bound-constrained L-BFGS-B
    solve of the entropy-transport functional with an analytic gradient.
    """
    x0, m0 = np.asarray(mu0.positions), np.asarray(mu0.masses)
    x1, m1 = np.asarray(mu1.positions), np.asarray(mu1.masses)
    if x0.shape[0] == 0 or x1.shape[0] == 0:
        return float(m0.sum() + m1.sum())
    dist = cdist(x0, x1)
    near = dist < math.pi / 2
    if not near.any():
        return float(m0.sum() + m1.sum())
    idx = np.argwhere(near)
    cost = -np.log(np.cos(dist[near]) ** 2)

    def F(s):
        return np.where(s > 0, s * np.log(np.maximum(s, 1e-300)) - s + 1.0, 1.0)

    def objective(e):
        eta = np.zeros(dist.shape)
        eta[near] = e
        a, b = eta.sum(axis=1), eta.sum(axis=0)
        val = np.sum(m0 * F(a / m0)) + np.sum(m1 * F(b / m1)) + e @ cost
        ga = np.log(np.maximum(a / m0, 1e-300))
        gb = np.log(np.maximum(b / m1, 1e-300))
        return val, ga[idx[:, 0]] + gb[idx[:, 1]] + cost

    start = np.full(idx.shape[0], 0.1 * min(m0.min(), m1.min()))
    res = minimize(objective, start, jac=True, method="L-BFGS-B", bounds=[(0, None)] * idx.shape[0],
                   options={"ftol": 1e-16, "gtol": 1e-12, "maxiter": 20000, "maxcor": 30})
    return float(res.fun)


def two_dirac_hk2(r0sq: float, r1sq: float, rho: float) -> float:
    """Squared distance between ``r0sq delta_z0`` and ``r1sq delta_z1`` at separation ``rho``."""
    c = math.cos(rho) if rho < math.pi / 2 else 0.0
    return r0sq + r1sq - 2.0 * math.sqrt(r0sq * r1sq) * c


def random_pair(rng, max_atoms=4, dimension=2, box=1.0, mass_range=(0.1, 2.0)):
    n0, n1 = rng.integers(1, max_atoms + 1, 2)
    mu0 = DiscreteMeasure(rng.uniform(0, box, (n0, dimension)), rng.uniform(*mass_range, n0))
    mu1 = DiscreteMeasure(rng.uniform(0, box, (n1, dimension)), rng.uniform(*mass_range, n1))
    return mu0, mu1


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is not None and module.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(module.RESULTS):
            terminalreporter.write_line(line)
