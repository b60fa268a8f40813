"""Optional scikit-learn style wrapper around geodesic construction.

``HKGeodesic().fit(mu0, mu1).transform(times)`` returns the sampled
measures.  When scikit-learn is installed the class derives from its
``BaseEstimator`` (parameter introspection, cloning); otherwise it is a
plain class with the same interface.  The core package never imports this
module.
"""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .geodesics import build_geodesic, sample
from .let_solver import SolverOptions
from .measures import DiscreteMeasure

try:  # optional dependency
    from sklearn.base import BaseEstimator as _Base
except ImportError:  # pragma: no cover - exercised only without scikit-learn
    class _Base:
        def get_params(self, deep=True):
            return {"tolerance": self.tolerance, "seed": self.seed}

        def set_params(self, **params):
            for k, v in params.items():
                setattr(self, k, v)
            return self


def _as_measure(obj) -> DiscreteMeasure:
    if isinstance(obj, DiscreteMeasure):
        return obj
    arr = np.asarray(obj, dtype=float)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise InputError("array input needs shape (n_atoms, d + 1) with masses in the last column")
    return DiscreteMeasure(arr[:, :-1], arr[:, -1])


class HKGeodesic(_Base):
    """Fit an HK geodesic between two measures and sample it.

    Measures are :class:`DiscreteMeasure` objects or arrays whose last column
    holds the masses.
    """

    def __init__(self, tolerance: float = 1e-6, seed: int = 0):
        self.tolerance = tolerance
        self.seed = seed

    def fit(self, X, y):
        """``X`` is the source measure and ``y`` the target measure."""
        opts = SolverOptions(tolerance=self.tolerance, seed=self.seed)
        self.curve_ = build_geodesic(_as_measure(X), _as_measure(y), opts)
        self.hk_squared_ = self.curve_.hk_squared
        return self

    def transform(self, times):
        if not hasattr(self, "curve_"):
            raise InputError("HKGeodesic is not fitted")
        return [sample(self.curve_, float(t)) for t in np.atleast_1d(times)]

    def mass_profile(self, times) -> np.ndarray:
        return np.array([mu.total_mass() for mu in self.transform(times)])
